//! Slow, literal reference implementations for checking `dictseg`.
//!
//! Nothing here depends on `dictseg`; inputs are plain slices so the oracles
//! cannot share code paths with what they check. All coordinates are 0-based
//! and images are row-major.

/// Copies the `m×m` window centred at `(x, y)` in `(dy, dx, channel)` order.
pub fn window_copy(
    data: &[f64],
    width: usize,
    channels: usize,
    x: usize,
    y: usize,
    m: usize,
) -> Vec<f64> {
    let s = (m / 2) as isize;
    let mut out = Vec::new();
    for dy in -s..=s {
        for dx in -s..=s {
            for c in 0..channels {
                let px = (x as isize + dx) as usize;
                let py = (y as isize + dy) as usize;
                out.push(data[(py * width + px) * channels + c]);
            }
        }
    }
    out
}

/// A tree in breadth-first layout with 1-based node ids.
pub struct TreeView<'a> {
    pub branching: usize,
    pub dim: usize,
    pub centres: &'a [f64],
    pub non_empty: &'a [bool],
}

/// Exhaustive descent: all node distances are computed first, then the path
/// is replayed from explicit child lists built from parent links.
pub fn nearest_along_path(tree: &TreeView<'_>, feature: &[f64]) -> usize {
    let k = tree.non_empty.len();
    let dist: Vec<f64> = (0..k)
        .map(|n| {
            let c = &tree.centres[n * tree.dim..(n + 1) * tree.dim];
            c.iter().zip(feature).map(|(a, b)| (a - b) * (a - b)).sum()
        })
        .collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for id in 2..=k {
        let parent = (id - 2) / tree.branching + 1;
        children[parent].push(id);
    }
    let mut path = vec![1usize];
    let mut node = 1;
    loop {
        let candidates: Vec<usize> = children[node]
            .iter()
            .copied()
            .filter(|&c| tree.non_empty[c - 1])
            .collect();
        if candidates.is_empty() {
            break;
        }
        // Lowest id among the minimum-distance candidates.
        let min = candidates
            .iter()
            .map(|&c| dist[c - 1])
            .fold(f64::INFINITY, f64::min);
        node = *candidates.iter().find(|&&c| dist[c - 1] == min).unwrap();
        path.push(node);
    }
    let min = path.iter().map(|&p| dist[p - 1]).fold(f64::INFINITY, f64::min);
    *path.iter().find(|&&p| dist[p - 1] == min).unwrap()
}

/// Dense `n×m` relation-count matrix, built literally: for every centre and
/// displacement, one relation between image pixel and dictionary pixel.
pub fn dense_biadjacency(assign: &[u32], width: usize, height: usize, m: usize, k: usize) -> Vec<Vec<u32>> {
    let s = (m / 2) as isize;
    let n = width * height;
    let mut b = vec![vec![0u32; m * m * k]; n];
    for y in 0..height {
        for x in 0..width {
            let a = assign[y * width + x] as usize;
            if a == 0 {
                continue;
            }
            for dy in -s..=s {
                for dx in -s..=s {
                    let i = ((y as isize + dy) as usize) * width + (x as isize + dx) as usize;
                    let j = (dx + s) as usize + (dy + s) as usize * m + (a - 1) * m * m;
                    b[i][j] += 1;
                }
            }
        }
    }
    b
}

/// Dense `diag(B·1)⁻¹·B`, zero rows left zero.
pub fn dense_row_normalize(b: &[Vec<u32>]) -> Vec<Vec<f64>> {
    b.iter()
        .map(|row| {
            let sum: u32 = row.iter().sum();
            row.iter()
                .map(|&v| if sum == 0 { 0.0 } else { v as f64 / sum as f64 })
                .collect()
        })
        .collect()
}

pub fn dense_transpose(b: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let cols = b.first().map_or(0, Vec::len);
    (0..cols).map(|j| b.iter().map(|row| row[j]).collect()).collect()
}

/// Dense `A·V` with `V` row-major `cols×classes`.
pub fn dense_matmul(a: &[Vec<f64>], v: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len() * classes];
    for (r, row) in a.iter().enumerate() {
        for (col, &w) in row.iter().enumerate() {
            if w != 0.0 {
                for c in 0..classes {
                    out[r * classes + c] += w * v[col * classes + c];
                }
            }
        }
    }
    out
}

/// Procedural propagation: average label patches per dictionary element
/// (gather), then average dictionary patches back per image pixel (scatter).
/// Dictionary pixels no patch maps to contribute zero.
pub fn gather_scatter(
    assign: &[u32],
    width: usize,
    height: usize,
    m: usize,
    k: usize,
    labels: &[f64],
    classes: usize,
) -> Vec<f64> {
    let s = (m / 2) as isize;
    let area = m * m;
    let mut dict_sum = vec![0.0; k * area * classes];
    let mut dict_count = vec![0usize; k * area];
    let centres: Vec<(usize, usize, usize)> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter_map(|(x, y)| {
            let a = assign[y * width + x] as usize;
            (a != 0).then_some((x, y, a))
        })
        .collect();
    for &(x, y, a) in &centres {
        for dy in -s..=s {
            for dx in -s..=s {
                let i = ((y as isize + dy) as usize) * width + (x as isize + dx) as usize;
                let d = (a - 1) * area + (dx + s) as usize + (dy + s) as usize * m;
                dict_count[d] += 1;
                for c in 0..classes {
                    dict_sum[d * classes + c] += labels[i * classes + c];
                }
            }
        }
    }
    let dict: Vec<f64> = (0..k * area * classes)
        .map(|e| {
            let cnt = dict_count[e / classes];
            if cnt == 0 {
                0.0
            } else {
                dict_sum[e] / cnt as f64
            }
        })
        .collect();

    let mut img_sum = vec![0.0; width * height * classes];
    let mut img_count = vec![0usize; width * height];
    for &(x, y, a) in &centres {
        for dy in -s..=s {
            for dx in -s..=s {
                let i = ((y as isize + dy) as usize) * width + (x as isize + dx) as usize;
                let d = (a - 1) * area + (dx + s) as usize + (dy + s) as usize * m;
                img_count[i] += 1;
                for c in 0..classes {
                    img_sum[i * classes + c] += dict[d * classes + c];
                }
            }
        }
    }
    (0..width * height * classes)
        .map(|e| {
            let cnt = img_count[e / classes];
            if cnt == 0 {
                0.0
            } else {
                img_sum[e] / cnt as f64
            }
        })
        .collect()
}

/// Unique row maximum beating every other entry by more than `eps`.
pub fn row_argmax(row: &[f64], eps: f64) -> Option<usize> {
    (0..row.len()).find(|&c| (0..row.len()).all(|o| o == c || row[c] - row[o] > eps))
}

/// Label stack from a mark map (0 = unmarked, classes 1-based).
pub fn fill_labels(marks: &[u16], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(marks.len() * classes);
    for &mark in marks {
        for c in 0..classes {
            out.push(match mark {
                0 => 1.0 / classes as f64,
                m if m as usize == c + 1 => 1.0,
                _ => 0.0,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Variant {
    pub steps: u8,
    pub binarise: bool,
    pub overwrite: bool,
    pub eps: f64,
}

/// The full interactive update computed with [`gather_scatter`].
#[allow(clippy::too_many_arguments)]
pub fn update(
    assign: &[u32],
    width: usize,
    height: usize,
    m: usize,
    k: usize,
    marks: &[u16],
    classes: usize,
    variant: Variant,
) -> Vec<f64> {
    let l0 = fill_labels(marks, classes);
    let p1 = gather_scatter(assign, width, height, m, k, &l0, classes);
    if variant.steps == 1 {
        return p1;
    }
    let mut l1 = p1;
    if variant.binarise {
        for row in l1.chunks_exact_mut(classes) {
            if let Some(best) = row_argmax(row, variant.eps) {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = if c == best { 1.0 } else { 0.0 };
                }
            }
        }
    }
    if variant.overwrite {
        for (i, &mark) in marks.iter().enumerate() {
            if mark != 0 {
                for c in 0..classes {
                    l1[i * classes + c] = if c + 1 == mark as usize { 1.0 } else { 0.0 };
                }
            }
        }
    }
    gather_scatter(assign, width, height, m, k, &l1, classes)
}

/// Connected components with union-find over face neighbours. Returns a
/// component representative per voxel (`usize::MAX` for other labels).
pub fn components(labels: &[u16], width: usize, height: usize, depth: usize, class: u16) -> Vec<usize> {
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let n = labels.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let plane = width * height;
    for v in 0..n {
        if labels[v] != class {
            continue;
        }
        let (x, y, z) = (v % width, (v % plane) / width, v / plane);
        let mut join = |u: usize| {
            if labels[u] == class {
                let (a, b) = (find(&mut parent, v), find(&mut parent, u));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        };
        if x + 1 < width {
            join(v + 1);
        }
        if y + 1 < height {
            join(v + width);
        }
        if z + 1 < depth {
            join(v + plane);
        }
    }
    (0..n)
        .map(|v| if labels[v] == class { find(&mut parent, v) } else { usize::MAX })
        .collect()
}

/// Small-component removal via [`components`]; the replacement label is the
/// most frequent non-zero label over all (voxel, outside-neighbour) pairs,
/// ties to the lower label.
pub fn remove_small(
    labels: &[u16],
    width: usize,
    height: usize,
    depth: usize,
    class: u16,
    min_size: usize,
) -> Vec<u16> {
    let comp = components(labels, width, height, depth, class);
    let plane = width * height;
    let mut out = labels.to_vec();
    let mut roots: Vec<usize> = comp.iter().copied().filter(|&c| c != usize::MAX).collect();
    roots.sort_unstable();
    roots.dedup();
    for root in roots {
        let members: Vec<usize> = (0..labels.len()).filter(|&v| comp[v] == root).collect();
        if members.len() >= min_size {
            continue;
        }
        let mut votes = std::collections::BTreeMap::<u16, usize>::new();
        for &v in &members {
            let (x, y, z) = (v % width, (v % plane) / width, v / plane);
            let mut nbrs = Vec::new();
            if x > 0 { nbrs.push(v - 1); }
            if x + 1 < width { nbrs.push(v + 1); }
            if y > 0 { nbrs.push(v - width); }
            if y + 1 < height { nbrs.push(v + width); }
            if z > 0 { nbrs.push(v - plane); }
            if z + 1 < depth { nbrs.push(v + plane); }
            for u in nbrs {
                if labels[u] != class && labels[u] != 0 {
                    *votes.entry(labels[u]).or_default() += 1;
                }
            }
        }
        let max = votes.values().copied().max();
        if let Some(max) = max {
            let label = *votes.iter().find(|(_, &c)| c == max).unwrap().0;
            for &v in &members {
                out[v] = label;
            }
        }
    }
    out
}
