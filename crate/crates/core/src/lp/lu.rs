//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! The factorization is left-looking: basis columns are taken sparsest first,
//! each one is solved against the partial `L` (only the pivots it can reach
//! are touched), and its pivot is chosen among the not-yet-pivoted rows by
//! threshold partial pivoting with a preference for rows that occur in few
//! columns. Basis changes are appended as eta columns until the next refactor.

const NONE: usize = usize::MAX;
const PIVOT_THRESHOLD: f64 = 0.1;
const SINGULAR_TOL: f64 = 1e-10;

/// Basis positions that could not be pivoted, each paired with a row left
/// without a pivot. Replacing the position by that row's logical makes the
/// basis factorizable again.
#[derive(Debug)]
pub(crate) struct Singular {
    pub pairs: Vec<(usize, usize)>,
}

struct Eta {
    pos: usize,
    pivot: f64,
    idx: Vec<usize>,
    val: Vec<f64>,
}

pub(crate) struct Factor {
    m: usize,
    /// pivot k -> row
    prow: Vec<usize>,
    /// pivot k -> basis position
    pcol: Vec<usize>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    /// entries of U column k are indexed by earlier pivots
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    u_diag: Vec<f64>,
    etas: Vec<Eta>,
    work: Vec<f64>,
    ws: Workspace,
}

/// Buffers of the elimination, kept between refactorizations.
#[derive(Default)]
struct Workspace {
    /// active submatrix: values by column, pattern by row
    cols: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<usize>>,
    col_done: Vec<bool>,
    row_done: Vec<bool>,
    /// lazy count buckets; stale entries are dropped when inspected
    col_bucket: Vec<Vec<usize>>,
    row_bucket: Vec<Vec<usize>>,
    u_rows: Vec<Vec<(usize, f64)>>,
    dense: Vec<f64>,
    in_col: Vec<bool>,
    lcol: Vec<(usize, f64)>,
    /// basis position -> pivot index
    step: Vec<usize>,
}

fn col_max(c: &[(usize, f64)]) -> f64 {
    c.iter().fold(0.0f64, |a, t| a.max(t.1.abs()))
}

impl Factor {
    /// Factorizes the basis whose column at position `p` is `column(p)`.
    pub fn new<'a, F>(m: usize, column: F) -> Result<Factor, Singular>
    where
        F: Fn(usize) -> (&'a [usize], &'a [f64]),
    {
        let mut f = Factor {
            m,
            prow: Vec::new(),
            pcol: Vec::new(),
            l_start: Vec::new(),
            l_idx: Vec::new(),
            l_val: Vec::new(),
            u_start: Vec::new(),
            u_idx: Vec::new(),
            u_val: Vec::new(),
            u_diag: Vec::new(),
            etas: Vec::new(),
            work: vec![0.0; m],
            ws: Workspace::default(),
        };
        f.factorize(column)?;
        Ok(f)
    }

    /// Refactorizes in place, reusing buffers. On error the factor is
    /// unusable until a later call succeeds.
    pub fn factorize<'a, F>(&mut self, column: F) -> Result<(), Singular>
    where
        F: Fn(usize) -> (&'a [usize], &'a [f64]),
    {
        let m = self.m;
        let ws = &mut self.ws;
        ws.cols.resize_with(m, Vec::new);
        ws.rows.resize_with(m, Vec::new);
        ws.u_rows.resize_with(m, Vec::new);
        ws.col_bucket.resize_with(m + 1, Vec::new);
        ws.row_bucket.resize_with(m + 1, Vec::new);
        for v in ws.rows.iter_mut().chain(ws.col_bucket.iter_mut()).chain(ws.row_bucket.iter_mut()) {
            v.clear();
        }
        ws.col_done.clear();
        ws.col_done.resize(m, false);
        ws.row_done.clear();
        ws.row_done.resize(m, false);
        ws.dense.resize(m, 0.0);
        ws.in_col.resize(m, false);
        for p in 0..m {
            let (idx, val) = column(p);
            let c = &mut ws.cols[p];
            c.clear();
            for (&i, &v) in idx.iter().zip(val) {
                if v != 0.0 {
                    c.push((i, v));
                    ws.rows[i].push(p);
                }
            }
        }
        for p in 0..m {
            ws.col_bucket[ws.cols[p].len()].push(p);
            ws.row_bucket[ws.rows[p].len()].push(p);
        }

        self.prow.clear();
        self.pcol.clear();
        self.l_start.clear();
        self.l_start.push(0);
        self.l_idx.clear();
        self.l_val.clear();
        self.u_diag.clear();
        self.etas.clear();
        let mut failed: Vec<usize> = Vec::new();

        while self.prow.len() + failed.len() < m {
            // pivot choice: singletons first, then a short Markowitz search
            let mut best: Option<(usize, usize, usize)> = None; // (cost, row, col)
            let mut examined = 0;
            'search: for cnt in 0..=m {
                for is_col in [true, false] {
                    let bucket = if is_col { &mut ws.col_bucket[cnt] } else { &mut ws.row_bucket[cnt] };
                    let mut t = 0;
                    while t < bucket.len() {
                        let id = bucket[t];
                        let live = if is_col {
                            !ws.col_done[id] && ws.cols[id].len() == cnt
                        } else {
                            !ws.row_done[id] && ws.rows[id].len() == cnt
                        };
                        if !live {
                            bucket.swap_remove(t);
                            continue;
                        }
                        t += 1;
                        if is_col {
                            let c = &ws.cols[id];
                            let cmax = col_max(c);
                            if cmax < SINGULAR_TOL {
                                best = Some((0, NONE, id));
                                break 'search;
                            }
                            for &(i, v) in c {
                                if v.abs() >= PIVOT_THRESHOLD * cmax {
                                    let cost = (ws.rows[i].len() - 1) * (cnt - 1);
                                    if best.map_or(true, |b| cost < b.0) {
                                        best = Some((cost, i, id));
                                    }
                                }
                            }
                        } else {
                            for &j in &ws.rows[id] {
                                let c = &ws.cols[j];
                                let v = c.iter().find(|t| t.0 == id).map_or(0.0, |t| t.1);
                                if v != 0.0 && v.abs() >= PIVOT_THRESHOLD * col_max(c) {
                                    let cost = (cnt - 1) * (c.len() - 1);
                                    if best.map_or(true, |b| cost < b.0) {
                                        best = Some((cost, id, j));
                                    }
                                }
                            }
                        }
                        examined += 1;
                        if let Some(b) = best {
                            if b.0 <= cnt.saturating_sub(1).pow(2) || examined >= 4 {
                                break 'search;
                            }
                        }
                    }
                }
            }
            let Some((_, r, c)) = best else {
                // only empty rows are left, so every open column is singular
                failed.extend((0..m).filter(|&j| !ws.col_done[j]));
                break;
            };
            ws.col_done[c] = true;
            if r == NONE {
                failed.push(c);
                for t in 0..ws.cols[c].len() {
                    let i = ws.cols[c][t].0;
                    ws.rows[i].retain(|&j| j != c);
                    ws.row_bucket[ws.rows[i].len()].push(i);
                }
                ws.cols[c].clear();
                continue;
            }

            ws.row_done[r] = true;
            let pc = std::mem::take(&mut ws.cols[c]);
            let diag = pc.iter().find(|t| t.0 == r).map_or(0.0, |t| t.1);
            ws.lcol.clear();
            for &(i, v) in &pc {
                if i != r {
                    ws.lcol.push((i, v / diag));
                    ws.rows[i].retain(|&j| j != c);
                }
            }
            ws.cols[c] = pc;
            ws.cols[c].clear();
            let k = self.prow.len();
            let mut urow = std::mem::take(&mut ws.u_rows[k]);
            urow.clear();
            let others = std::mem::take(&mut ws.rows[r]);
            for &j in &others {
                if j == c {
                    continue;
                }
                let cj = &mut ws.cols[j];
                let t = cj.iter().position(|t| t.0 == r).expect("row pattern out of sync");
                let arj = cj.swap_remove(t).1;
                urow.push((j, arj));
                if !ws.lcol.is_empty() {
                    for &(i, v) in cj.iter() {
                        ws.dense[i] = v;
                        ws.in_col[i] = true;
                    }
                    for &(i, l) in &ws.lcol {
                        if !ws.in_col[i] {
                            ws.in_col[i] = true;
                            ws.dense[i] = 0.0;
                            cj.push((i, 0.0));
                            ws.rows[i].push(j);
                        }
                        ws.dense[i] -= l * arj;
                    }
                    for t in cj.iter_mut() {
                        t.1 = ws.dense[t.0];
                        ws.in_col[t.0] = false;
                    }
                }
                ws.col_bucket[cj.len()].push(j);
            }
            ws.rows[r] = others;
            ws.rows[r].clear();
            for &(i, l) in &ws.lcol {
                ws.row_bucket[ws.rows[i].len()].push(i);
                self.l_idx.push(i);
                self.l_val.push(l);
            }
            self.l_start.push(self.l_idx.len());
            self.prow.push(r);
            self.pcol.push(c);
            ws.u_rows[k] = urow;
            self.u_diag.push(diag);
        }

        if !failed.is_empty() {
            let free_rows = (0..m).filter(|&i| !ws.row_done[i]);
            return Err(Singular {
                pairs: failed.into_iter().zip(free_rows).collect(),
            });
        }

        // U came out by rows keyed on basis positions; store it by columns
        // keyed on pivot index
        let step = &mut ws.step;
        step.resize(m, 0);
        for (k, &p) in self.pcol.iter().enumerate() {
            step[p] = k;
        }
        let mut cnt = vec![0usize; m + 1];
        for ur in &ws.u_rows[..m] {
            for &(j, _) in ur {
                cnt[step[j] + 1] += 1;
            }
        }
        for k in 0..m {
            cnt[k + 1] += cnt[k];
        }
        self.u_start.clear();
        self.u_start.extend_from_slice(&cnt);
        let nnz = cnt[m];
        self.u_idx.clear();
        self.u_idx.resize(nnz, 0);
        self.u_val.clear();
        self.u_val.resize(nnz, 0.0);
        for (k, ur) in ws.u_rows[..m].iter().enumerate() {
            for &(j, v) in ur {
                let col = step[j];
                self.u_idx[cnt[col]] = k;
                self.u_val[cnt[col]] = v;
                cnt[col] += 1;
            }
        }
        Ok(())
    }

    pub fn eta_count(&self) -> usize {
        self.etas.len()
    }



    /// Solves `B w = a` in place: `v` holds `a` by row on entry and `w` by
    /// basis position on exit.
    pub fn ftran(&mut self, v: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            let xp = v[self.prow[k]];
            if xp != 0.0 {
                for t in self.l_start[k]..self.l_start[k + 1] {
                    v[self.l_idx[t]] -= self.l_val[t] * xp;
                }
            }
        }
        let z = &mut self.work;
        for k in 0..m {
            z[k] = v[self.prow[k]];
        }
        for k in (0..m).rev() {
            let yk = z[k] / self.u_diag[k];
            z[k] = yk;
            if yk != 0.0 {
                for t in self.u_start[k]..self.u_start[k + 1] {
                    z[self.u_idx[t]] -= self.u_val[t] * yk;
                }
            }
        }
        for k in 0..m {
            v[self.pcol[k]] = z[k];
        }
        for e in &self.etas {
            let yr = v[e.pos] / e.pivot;
            v[e.pos] = yr;
            if yr != 0.0 {
                for (&i, &w) in e.idx.iter().zip(&e.val) {
                    v[i] -= w * yr;
                }
            }
        }
    }

    /// Solves `Bᵀ π = c` in place: `v` holds `c` by basis position on entry
    /// and `π` by row on exit.
    pub fn btran(&mut self, v: &mut [f64]) {
        let m = self.m;
        for e in self.etas.iter().rev() {
            let mut s = v[e.pos];
            for (&i, &w) in e.idx.iter().zip(&e.val) {
                s -= w * v[i];
            }
            v[e.pos] = s / e.pivot;
        }
        let z = &mut self.work;
        for k in 0..m {
            z[k] = v[self.pcol[k]];
        }
        for k in 0..m {
            let mut s = z[k];
            for t in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[t] * z[self.u_idx[t]];
            }
            z[k] = s / self.u_diag[k];
        }
        for k in (0..m).rev() {
            let mut s = z[k];
            for t in self.l_start[k]..self.l_start[k + 1] {
                s -= self.l_val[t] * v[self.l_idx[t]];
            }
            v[self.prow[k]] = s;
        }
    }

    /// Records that the column at `pos` was replaced; `w` is the FTRAN of the
    /// entering column (indexed by basis position).
    pub fn update(&mut self, pos: usize, w: &[f64]) {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &wi) in w.iter().enumerate() {
            if i != pos && wi != 0.0 {
                idx.push(i);
                val.push(wi);
            }
        }
        self.etas.push(Eta {
            pos,
            pivot: w[pos],
            idx,
            val,
        });
    }
}
