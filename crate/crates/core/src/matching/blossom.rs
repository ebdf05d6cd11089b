//! Maximum-weight matching on general graphs (Edmonds' blossom algorithm,
//! primal-dual, after van Rantwijk's formulation) with integer weights.
//!
//! Only maximum-cardinality mode is implemented. The solver accepts a
//! starting dual solution and a starting matching so it can be warm-started
//! by a greedy pass.

const NONE: usize = usize::MAX;

pub(crate) struct Outcome {
    /// Matched partner of each vertex.
    pub mate: Vec<usize>,
    /// Vertex duals followed by blossom duals.
    pub dual: Vec<i64>,
    /// Parent blossom of each vertex or blossom (`NONE` at top level).
    pub parent: Vec<usize>,
}

impl Outcome {
    pub fn is_perfect(&self) -> bool {
        self.mate.iter().all(|&m| m != NONE)
    }

    /// Reduced cost of an edge `(i, j)` with weight `w` under the final duals.
    /// Nonnegative on every edge when the duals are feasible.
    pub fn reduced_cost(&self, i: usize, j: usize, w: i64, chain_i: &mut Vec<usize>, chain_j: &mut Vec<usize>) -> i64 {
        let mut s = self.dual[i] + self.dual[j] - 2 * w;
        if self.parent[i] == NONE || self.parent[j] == NONE {
            return s;
        }
        chain_i.clear();
        chain_j.clear();
        let mut b = self.parent[i];
        while b != NONE {
            chain_i.push(b);
            b = self.parent[b];
        }
        let mut b = self.parent[j];
        while b != NONE {
            chain_j.push(b);
            b = self.parent[b];
        }
        for (bi, bj) in chain_i.iter().rev().zip(chain_j.iter().rev()) {
            if bi != bj {
                break;
            }
            s += 2 * self.dual[*bi];
        }
        s
    }
}

pub(crate) fn is_none(v: usize) -> bool {
    v == NONE
}

struct Solver<'a> {
    nv: usize,
    edges: &'a [(usize, usize, i64)],
    endpoint: Vec<usize>,
    neighbend: Vec<Vec<usize>>,
    mate: Vec<usize>,
    label: Vec<u8>,
    labelend: Vec<usize>,
    inblossom: Vec<usize>,
    blossomparent: Vec<usize>,
    blossomchilds: Vec<Vec<usize>>,
    blossombase: Vec<usize>,
    blossomendps: Vec<Vec<usize>>,
    bestedge: Vec<usize>,
    blossombestedges: Vec<Option<Vec<usize>>>,
    unusedblossoms: Vec<usize>,
    dualvar: Vec<i64>,
    allowedge: Vec<bool>,
    queue: Vec<usize>,
    bestedgeto: Vec<usize>,
    /// Vertices and blossoms labelled or given a best edge this stage.
    active: Vec<usize>,
    in_active: Vec<bool>,
}

/// Solves maximum-weight maximum-cardinality matching.
///
/// Weights must be even. `init_dual` must be even and satisfy
/// `dual[i] + dual[j] >= 2 w` on every edge; `init_mate` pairs must be
/// tight edges given as vertex partners.
pub(crate) fn solve(nv: usize, edges: &[(usize, usize, i64)], init_dual: &[i64], init_mate: &[usize]) -> Outcome {
    let ne = edges.len();
    let mut endpoint = Vec::with_capacity(2 * ne);
    let mut neighbend = vec![Vec::new(); nv];
    for (k, &(i, j, _)) in edges.iter().enumerate() {
        endpoint.push(i);
        endpoint.push(j);
        neighbend[i].push(2 * k + 1);
        neighbend[j].push(2 * k);
    }
    let mut dualvar = vec![0i64; 2 * nv];
    dualvar[..nv].copy_from_slice(init_dual);
    let mut mate = vec![NONE; nv];
    if !init_mate.is_empty() {
        // translate vertex partners to remote endpoints
        for v in 0..nv {
            let u = init_mate[v];
            if u == NONE {
                continue;
            }
            for &p in &neighbend[v] {
                if endpoint[p] == u {
                    mate[v] = p;
                    break;
                }
            }
        }
    }
    let mut s = Solver {
        nv,
        edges,
        endpoint,
        neighbend,
        mate,
        label: vec![0; 2 * nv],
        labelend: vec![NONE; 2 * nv],
        inblossom: (0..nv).collect(),
        blossomparent: vec![NONE; 2 * nv],
        blossomchilds: vec![Vec::new(); 2 * nv],
        blossombase: (0..nv).chain(std::iter::repeat(NONE).take(nv)).collect(),
        blossomendps: vec![Vec::new(); 2 * nv],
        bestedge: vec![NONE; 2 * nv],
        blossombestedges: vec![None; 2 * nv],
        unusedblossoms: (nv..2 * nv).rev().collect(),
        dualvar,
        allowedge: vec![false; ne],
        queue: Vec::new(),
        bestedgeto: vec![NONE; 2 * nv],
        active: Vec::new(),
        in_active: vec![false; 2 * nv],
    };
    s.run();
    let mut mate_v = vec![NONE; nv];
    for v in 0..nv {
        if s.mate[v] != NONE {
            mate_v[v] = s.endpoint[s.mate[v]];
        }
    }
    Outcome {
        mate: mate_v,
        dual: s.dualvar,
        parent: s.blossomparent,
    }
}

impl<'a> Solver<'a> {
    #[inline]
    fn slack(&self, k: usize) -> i64 {
        let (i, j, w) = self.edges[k];
        self.dualvar[i] + self.dualvar[j] - 2 * w
    }

    fn leaves(&self, b: usize, out: &mut Vec<usize>) {
        out.clear();
        if b < self.nv {
            out.push(b);
            return;
        }
        self.push_leaves(b, out);
    }

    fn push_leaves(&self, b: usize, out: &mut Vec<usize>) {
        for &c in &self.blossomchilds[b] {
            if c < self.nv {
                out.push(c);
            } else {
                self.push_leaves(c, out);
            }
        }
    }

    #[inline]
    fn touch(&mut self, x: usize) {
        if !self.in_active[x] {
            self.in_active[x] = true;
            self.active.push(x);
        }
    }

    fn assign_label(&mut self, w: usize, t: u8, p: usize) {
        let b = self.inblossom[w];
        self.touch(w);
        self.touch(b);
        debug_assert!(self.label[w] == 0 && self.label[b] == 0);
        self.label[w] = t;
        self.label[b] = t;
        self.labelend[w] = p;
        self.labelend[b] = p;
        self.bestedge[w] = NONE;
        self.bestedge[b] = NONE;
        if t == 1 {
            if b < self.nv {
                self.queue.push(b);
            } else {
                let mut q = std::mem::take(&mut self.queue);
                self.push_leaves(b, &mut q);
                self.queue = q;
            }
        } else if t == 2 {
            let base = self.blossombase[b];
            debug_assert!(self.mate[base] != NONE);
            let mb = self.mate[base];
            self.assign_label(self.endpoint[mb], 1, mb ^ 1);
        }
    }

    fn scan_blossom(&mut self, mut v: usize, mut w: usize) -> usize {
        let mut path = Vec::new();
        let mut base = NONE;
        while v != NONE || w != NONE {
            let mut b = self.inblossom[v];
            if self.label[b] & 4 != 0 {
                base = self.blossombase[b];
                break;
            }
            debug_assert_eq!(self.label[b], 1);
            path.push(b);
            self.label[b] = 5;
            if self.labelend[b] == NONE {
                v = NONE;
            } else {
                v = self.endpoint[self.labelend[b]];
                b = self.inblossom[v];
                debug_assert_eq!(self.label[b], 2);
                v = self.endpoint[self.labelend[b]];
            }
            if w != NONE {
                std::mem::swap(&mut v, &mut w);
            }
        }
        for b in path {
            self.label[b] = 1;
        }
        base
    }

    fn add_blossom(&mut self, base: usize, k: usize) {
        let (mut v, mut w, _) = self.edges[k];
        let bb = self.inblossom[base];
        let mut bv = self.inblossom[v];
        let mut bw = self.inblossom[w];
        let b = self.unusedblossoms.pop().expect("blossom pool exhausted");
        self.blossombase[b] = base;
        self.blossomparent[b] = NONE;
        self.blossomparent[bb] = b;
        let mut path = Vec::new();
        let mut endps = Vec::new();
        while bv != bb {
            self.blossomparent[bv] = b;
            path.push(bv);
            endps.push(self.labelend[bv]);
            v = self.endpoint[self.labelend[bv]];
            bv = self.inblossom[v];
        }
        path.push(bb);
        path.reverse();
        endps.reverse();
        endps.push(2 * k);
        while bw != bb {
            self.blossomparent[bw] = b;
            path.push(bw);
            endps.push(self.labelend[bw] ^ 1);
            w = self.endpoint[self.labelend[bw]];
            bw = self.inblossom[w];
        }
        self.label[b] = 1;
        self.touch(b);
        self.labelend[b] = self.labelend[bb];
        self.dualvar[b] = 0;
        self.blossomchilds[b] = path.clone();
        self.blossomendps[b] = endps;
        let mut lv = Vec::new();
        self.leaves(b, &mut lv);
        for &x in &lv {
            if self.label[self.inblossom[x]] == 2 {
                self.queue.push(x);
            }
            self.inblossom[x] = b;
        }
        let mut touched: Vec<usize> = Vec::new();
        for &sub in &path {
            let lists: Vec<usize> = match self.blossombestedges[sub].take() {
                Some(l) => l,
                None => {
                    self.leaves(sub, &mut lv);
                    lv.iter()
                        .flat_map(|&x| self.neighbend[x].iter().map(|p| p / 2))
                        .collect()
                }
            };
            for k2 in lists {
                let (mut i, mut j, _) = self.edges[k2];
                if self.inblossom[j] == b {
                    std::mem::swap(&mut i, &mut j);
                }
                let _ = i;
                let bj = self.inblossom[j];
                if bj != b && self.label[bj] == 1 {
                    let cur = self.bestedgeto[bj];
                    if cur == NONE || self.slack(k2) < self.slack(cur) {
                        if cur == NONE {
                            touched.push(bj);
                        }
                        self.bestedgeto[bj] = k2;
                    }
                }
            }
            self.bestedge[sub] = NONE;
        }
        touched.sort_unstable();
        let mut best = Vec::with_capacity(touched.len());
        for bj in touched {
            best.push(self.bestedgeto[bj]);
            self.bestedgeto[bj] = NONE;
        }
        let mut be = NONE;
        for &k2 in &best {
            if be == NONE || self.slack(k2) < self.slack(be) {
                be = k2;
            }
        }
        self.blossombestedges[b] = Some(best);
        self.bestedge[b] = be;
    }

    fn expand_blossom(&mut self, b: usize, endstage: bool) {
        let childs = self.blossomchilds[b].clone();
        let mut lv = Vec::new();
        for &s in &childs {
            self.blossomparent[s] = NONE;
            if s < self.nv {
                self.inblossom[s] = s;
            } else if endstage && self.dualvar[s] == 0 {
                self.expand_blossom(s, endstage);
            } else {
                self.leaves(s, &mut lv);
                for &x in &lv {
                    self.inblossom[x] = s;
                }
            }
        }
        if !endstage && self.label[b] == 2 {
            let len = childs.len() as isize;
            let at = |j: isize| -> usize { childs[(((j % len) + len) % len) as usize] };
            let endps = self.blossomendps[b].clone();
            let ep = |j: isize| -> usize { endps[(((j % len) + len) % len) as usize] };
            let entrychild = self.inblossom[self.endpoint[self.labelend[b] ^ 1]];
            let mut j = childs.iter().position(|&c| c == entrychild).unwrap() as isize;
            let (jstep, endptrick): (isize, usize) = if j & 1 == 1 {
                j -= len;
                (1, 0)
            } else {
                (-1, 1)
            };
            let mut p = self.labelend[b];
            while j != 0 {
                let e1 = self.endpoint[p ^ 1];
                self.label[e1] = 0;
                let e2 = self.endpoint[ep(j - endptrick as isize) ^ endptrick ^ 1];
                self.label[e2] = 0;
                self.assign_label(self.endpoint[p ^ 1], 2, p);
                self.allowedge[ep(j - endptrick as isize) / 2] = true;
                j += jstep;
                p = ep(j - endptrick as isize) ^ endptrick;
                self.allowedge[p / 2] = true;
                j += jstep;
            }
            let bv = at(j);
            let e = self.endpoint[p ^ 1];
            self.label[e] = 2;
            self.label[bv] = 2;
            self.touch(e);
            self.touch(bv);
            self.labelend[e] = p;
            self.labelend[bv] = p;
            self.bestedge[bv] = NONE;
            j += jstep;
            while at(j) != entrychild {
                let bv = at(j);
                if self.label[bv] == 1 {
                    j += jstep;
                    continue;
                }
                self.leaves(bv, &mut lv);
                if let Some(&v) = lv.iter().find(|&&x| self.label[x] != 0) {
                    debug_assert_eq!(self.label[v], 2);
                    debug_assert_eq!(self.inblossom[v], bv);
                    self.label[v] = 0;
                    let mb = self.mate[self.blossombase[bv]];
                    self.label[self.endpoint[mb]] = 0;
                    self.assign_label(v, 2, self.labelend[v]);
                }
                j += jstep;
            }
        }
        self.label[b] = 0;
        self.labelend[b] = NONE;
        self.blossomchilds[b] = Vec::new();
        self.blossomendps[b] = Vec::new();
        self.blossombase[b] = NONE;
        self.blossombestedges[b] = None;
        self.bestedge[b] = NONE;
        self.unusedblossoms.push(b);
    }

    fn augment_blossom(&mut self, b: usize, v: usize) {
        let mut t = v;
        while self.blossomparent[t] != b {
            t = self.blossomparent[t];
        }
        if t >= self.nv {
            self.augment_blossom(t, v);
        }
        let len = self.blossomchilds[b].len() as isize;
        let i = self.blossomchilds[b].iter().position(|&c| c == t).unwrap();
        let mut j = i as isize;
        let (jstep, endptrick): (isize, usize) = if i & 1 == 1 {
            j -= len;
            (1, 0)
        } else {
            (-1, 1)
        };
        let wrap = |j: isize| -> usize { (((j % len) + len) % len) as usize };
        while j != 0 {
            j += jstep;
            let t = self.blossomchilds[b][wrap(j)];
            let p = self.blossomendps[b][wrap(j - endptrick as isize)] ^ endptrick;
            if t >= self.nv {
                self.augment_blossom(t, self.endpoint[p]);
            }
            j += jstep;
            let t = self.blossomchilds[b][wrap(j)];
            if t >= self.nv {
                self.augment_blossom(t, self.endpoint[p ^ 1]);
            }
            let e0 = self.endpoint[p];
            let e1 = self.endpoint[p ^ 1];
            self.mate[e0] = p ^ 1;
            self.mate[e1] = p;
        }
        self.blossomchilds[b].rotate_left(i);
        self.blossomendps[b].rotate_left(i);
        self.blossombase[b] = self.blossombase[self.blossomchilds[b][0]];
        debug_assert_eq!(self.blossombase[b], v);
    }

    fn augment_matching(&mut self, k: usize) {
        let (v, w, _) = self.edges[k];
        for (mut s, mut p) in [(v, 2 * k + 1), (w, 2 * k)] {
            loop {
                let bs = self.inblossom[s];
                debug_assert_eq!(self.label[bs], 1);
                if bs >= self.nv {
                    self.augment_blossom(bs, s);
                }
                self.mate[s] = p;
                if self.labelend[bs] == NONE {
                    break;
                }
                let t = self.endpoint[self.labelend[bs]];
                let bt = self.inblossom[t];
                debug_assert_eq!(self.label[bt], 2);
                s = self.endpoint[self.labelend[bt]];
                let j = self.endpoint[self.labelend[bt] ^ 1];
                if bt >= self.nv {
                    self.augment_blossom(bt, j);
                }
                self.mate[j] = self.labelend[bt];
                p = self.labelend[bt] ^ 1;
            }
        }
    }

    fn run(&mut self) {
        let nv = self.nv;
        for _stage in 0..nv {
            self.label.iter_mut().for_each(|x| *x = 0);
            self.bestedge.iter_mut().for_each(|x| *x = NONE);
            for b in nv..2 * nv {
                self.blossombestedges[b] = None;
            }
            self.allowedge.iter_mut().for_each(|x| *x = false);
            self.queue.clear();
            for &x in &self.active {
                self.in_active[x] = false;
            }
            self.active.clear();
            for v in 0..nv {
                if self.mate[v] == NONE && self.label[self.inblossom[v]] == 0 {
                    self.assign_label(v, 1, NONE);
                }
            }
            if self.queue.is_empty() {
                break;
            }
            let mut augmented = false;
            loop {
                while let Some(v) = self.queue.pop() {
                    debug_assert_eq!(self.label[self.inblossom[v]], 1);
                    for idx in 0..self.neighbend[v].len() {
                        let p = self.neighbend[v][idx];
                        let k = p / 2;
                        let w = self.endpoint[p];
                        if self.inblossom[v] == self.inblossom[w] {
                            continue;
                        }
                        let mut kslack = 0;
                        if !self.allowedge[k] {
                            kslack = self.slack(k);
                            if kslack <= 0 {
                                self.allowedge[k] = true;
                            }
                        }
                        if self.allowedge[k] {
                            if self.label[self.inblossom[w]] == 0 {
                                self.assign_label(w, 2, p ^ 1);
                            } else if self.label[self.inblossom[w]] == 1 {
                                let base = self.scan_blossom(v, w);
                                if base != NONE {
                                    self.add_blossom(base, k);
                                } else {
                                    self.augment_matching(k);
                                    augmented = true;
                                    break;
                                }
                            } else if self.label[w] == 0 {
                                self.touch(w);
                                self.label[w] = 2;
                                self.labelend[w] = p ^ 1;
                            }
                        } else if self.label[self.inblossom[w]] == 1 {
                            let b = self.inblossom[v];
                            if self.bestedge[b] == NONE || kslack < self.slack(self.bestedge[b]) {
                                self.bestedge[b] = k;
                            }
                        } else if self.label[w] == 0 && (self.bestedge[w] == NONE || kslack < self.slack(self.bestedge[w])) {
                            self.touch(w);
                            self.bestedge[w] = k;
                        }
                    }
                    if augmented {
                        break;
                    }
                }
                if augmented {
                    break;
                }
                // ties go to the lowest index, type 2 before 3 before 4
                let mut best2 = (i64::MAX, NONE);
                let mut best3 = (i64::MAX, NONE);
                let mut best4 = (i64::MAX, NONE);
                for &x in &self.active {
                    if x < nv && self.label[self.inblossom[x]] == 0 && self.bestedge[x] != NONE {
                        let d = self.slack(self.bestedge[x]);
                        if (d, x) < best2 {
                            best2 = (d, x);
                        }
                    }
                    if self.blossomparent[x] == NONE && self.label[x] == 1 && self.bestedge[x] != NONE {
                        let ks = self.slack(self.bestedge[x]);
                        debug_assert_eq!(ks % 2, 0);
                        if (ks / 2, x) < best3 {
                            best3 = (ks / 2, x);
                        }
                    }
                    if x >= nv
                        && self.blossombase[x] != NONE
                        && self.blossomparent[x] == NONE
                        && self.label[x] == 2
                        && (self.dualvar[x], x) < best4
                    {
                        best4 = (self.dualvar[x], x);
                    }
                }
                let mut deltatype = 1u8;
                let mut delta = 0i64;
                let mut deltaedge = NONE;
                let mut deltablossom = NONE;
                if best2.1 != NONE {
                    deltatype = 2;
                    delta = best2.0;
                    deltaedge = self.bestedge[best2.1];
                }
                if best3.1 != NONE && (deltatype == 1 || best3.0 < delta) {
                    deltatype = 3;
                    delta = best3.0;
                    deltaedge = self.bestedge[best3.1];
                }
                if best4.1 != NONE && (deltatype == 1 || best4.0 < delta) {
                    deltatype = 4;
                    delta = best4.0;
                    deltablossom = best4.1;
                }
                // deltatype 1 with delta 0: no further augmenting path exists
                let mut lv = Vec::new();
                for idx in 0..self.active.len() {
                    let x = self.active[idx];
                    if self.blossomparent[x] != NONE || (x >= nv && self.blossombase[x] == NONE) {
                        continue;
                    }
                    let sign = match self.label[x] {
                        1 => -1,
                        2 => 1,
                        _ => continue,
                    };
                    if x < nv {
                        self.dualvar[x] += sign * delta;
                    } else {
                        self.dualvar[x] -= sign * delta;
                        self.leaves(x, &mut lv);
                        for &v in &lv {
                            self.dualvar[v] += sign * delta;
                        }
                    }
                }
                match deltatype {
                    1 => break,
                    2 => {
                        self.allowedge[deltaedge] = true;
                        let (mut i, j, _) = self.edges[deltaedge];
                        if self.label[self.inblossom[i]] == 0 {
                            i = j;
                        }
                        self.queue.push(i);
                    }
                    3 => {
                        self.allowedge[deltaedge] = true;
                        let (i, _, _) = self.edges[deltaedge];
                        self.queue.push(i);
                    }
                    _ => self.expand_blossom(deltablossom, false),
                }
            }
            if !augmented {
                break;
            }
            for b in nv..2 * nv {
                if self.blossomparent[b] == NONE
                    && self.blossombase[b] != NONE
                    && self.label[b] == 1
                    && self.dualvar[b] == 0
                {
                    self.expand_blossom(b, true);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn greedy_start(nv: usize, edges: &[(usize, usize, i64)]) -> (Vec<i64>, Vec<usize>) {
        let mut dual = vec![i64::MIN; nv];
        for &(i, j, w) in edges {
            dual[i] = dual[i].max(w);
            dual[j] = dual[j].max(w);
        }
        for d in dual.iter_mut() {
            if *d == i64::MIN {
                *d = 0;
            }
        }
        (dual, vec![NONE; nv])
    }

    fn uniform_start(nv: usize, edges: &[(usize, usize, i64)]) -> (Vec<i64>, Vec<usize>) {
        let top = edges.iter().map(|e| e.2).max().unwrap_or(0);
        (vec![top; nv], vec![NONE; nv])
    }

    fn weight(edges: &[(usize, usize, i64)], mate: &[usize]) -> i64 {
        edges
            .iter()
            .filter(|&&(i, j, _)| mate[i] == j)
            .map(|e| e.2)
            .sum()
    }

    fn brute(nv: usize, edges: &[(usize, usize, i64)]) -> (usize, i64) {
        // best (cardinality, weight) over all matchings
        fn rec(k: usize, used: &mut Vec<bool>, edges: &[(usize, usize, i64)], card: usize, w: i64, best: &mut (usize, i64)) {
            if k == edges.len() {
                if (card, w) > *best {
                    *best = (card, w);
                }
                return;
            }
            rec(k + 1, used, edges, card, w, best);
            let (i, j, wt) = edges[k];
            if !used[i] && !used[j] {
                used[i] = true;
                used[j] = true;
                rec(k + 1, used, edges, card + 1, w + wt, best);
                used[i] = false;
                used[j] = false;
            }
        }
        let mut best = (0, i64::MIN);
        rec(0, &mut vec![false; nv], edges, 0, 0, &mut best);
        best
    }

    #[test]
    fn classic_cases() {
        // cases from the reference implementation's test-suite, weights doubled
        let cases: Vec<(Vec<(usize, usize, i64)>, usize)> = vec![
            (vec![(0, 1, 1)], 2),
            (vec![(1, 2, 10), (2, 3, 11)], 4),
            (vec![(1, 2, 5), (2, 3, 11), (3, 4, 5)], 5),
            (vec![(1, 2, 8), (1, 3, 9), (2, 3, 10), (3, 4, 7)], 5),
            (vec![(1, 2, 8), (1, 3, 9), (2, 3, 10), (3, 4, 7), (1, 6, 5), (4, 5, 6)], 7),
            (vec![(1, 2, 9), (1, 3, 8), (2, 3, 10), (1, 4, 5), (4, 5, 4), (1, 6, 3)], 7),
            (vec![(1, 2, 9), (1, 3, 8), (2, 3, 10), (1, 4, 5), (4, 5, 3), (1, 6, 4)], 7),
            (vec![(1, 2, 9), (1, 3, 8), (2, 3, 10), (1, 4, 5), (4, 5, 3), (3, 6, 4)], 7),
            (
                vec![(1, 2, 23), (1, 5, 22), (1, 6, 15), (2, 3, 25), (3, 4, 22), (4, 5, 25), (4, 8, 14), (5, 7, 13)],
                9,
            ),
            (
                vec![(1, 2, 19), (1, 3, 20), (1, 8, 8), (2, 3, 25), (2, 4, 18), (3, 5, 18), (4, 5, 13), (4, 7, 7), (5, 6, 7)],
                9,
            ),
            (
                vec![
                    (1, 2, 40), (1, 3, 40), (2, 3, 60), (2, 4, 55), (3, 5, 55), (4, 5, 50), (1, 8, 15), (5, 7, 30),
                    (7, 6, 10), (8, 10, 10), (4, 9, 30),
                ],
                11,
            ),
            (
                vec![
                    (1, 2, 45), (1, 5, 45), (2, 3, 50), (3, 4, 45), (4, 5, 50), (1, 6, 30), (3, 9, 35), (4, 8, 35),
                    (5, 7, 26), (9, 10, 5),
                ],
                11,
            ),
            (
                vec![
                    (1, 2, 45), (1, 5, 45), (2, 3, 50), (3, 4, 45), (4, 5, 50), (1, 6, 30), (3, 9, 35), (4, 8, 26),
                    (5, 7, 40), (9, 10, 5),
                ],
                11,
            ),
            (
                vec![
                    (1, 2, 45), (1, 5, 45), (2, 3, 50), (3, 4, 45), (4, 5, 50), (1, 6, 30), (3, 9, 35), (4, 8, 28),
                    (5, 7, 26), (9, 10, 5),
                ],
                11,
            ),
            (
                vec![
                    (1, 2, 45), (1, 7, 45), (2, 3, 50), (3, 4, 45), (4, 5, 95), (4, 6, 94), (5, 6, 94), (6, 7, 50),
                    (1, 8, 30), (3, 11, 35), (5, 9, 36), (7, 10, 26), (11, 12, 5),
                ],
                13,
            ),
            (
                vec![
                    (1, 2, 40), (1, 3, 40), (2, 3, 60), (2, 4, 55), (3, 5, 55), (4, 5, 50), (1, 8, 15), (5, 7, 30),
                    (7, 6, 10), (8, 10, 10), (4, 9, 30),
                ],
                11,
            ),
        ];
        for (raw, nv) in cases {
            let edges: Vec<_> = raw.iter().map(|&(i, j, w)| (i, j, 2 * w)).collect();
            let (dual, mate) = uniform_start(nv, &edges);
            let out = solve(nv, &edges, &dual, &mate);
            let card = out.mate.iter().filter(|&&m| m != NONE).count() / 2;
            assert_eq!((card, weight(&edges, &out.mate)), brute(nv, &edges), "{raw:?}");
        }
    }

    #[test]
    fn random_graphs_against_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let nv = rng.random_range(2..11);
            let mut edges = Vec::new();
            for i in 0..nv {
                for j in i + 1..nv {
                    if rng.random_bool(0.6) {
                        edges.push((i, j, 2 * rng.random_range(0..20i64)));
                    }
                }
            }
            if edges.len() > 14 {
                edges.truncate(14);
            }
            let best = brute(nv, &edges);
            let (dual, mate) = uniform_start(nv, &edges);
            let out = solve(nv, &edges, &dual, &mate);
            let card = out.mate.iter().filter(|&&m| m != NONE).count() / 2;
            assert_eq!((card, weight(&edges, &out.mate)), best, "{edges:?}");
            // warm starts are only valid when the optimum is perfect
            if 2 * best.0 == nv {
                let (dual, mate) = greedy_start(nv, &edges);
                let out = solve(nv, &edges, &dual, &mate);
                assert!(out.is_perfect());
                assert_eq!(weight(&edges, &out.mate), best.1, "{edges:?}");
            }
        }
    }
}
