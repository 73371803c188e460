//! Primal network simplex for dense balanced transportation problems.
//!
//! The spanning-tree bookkeeping (parent / thread / successor counts) follows
//! the classic strongly-feasible-tree implementation with block-search
//! pricing. Arcs of the complete bipartite graph are implicit: arc `e`
//! connects source `e / nt` to sink `e % nt`.

use crate::numeric::KahanSum;

const NONE: usize = usize::MAX;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SimplexError {
    IterationLimit(usize),
    Infeasible(f64),
}

/// Optimal basic solution of a transportation problem.
#[derive(Debug, Clone)]
pub(crate) struct SimplexSolution {
    /// Basic arcs with their flows, as `(source, sink, flow)`; zero-flow basic
    /// arcs are included.
    pub basis: Vec<(usize, usize, f64)>,
    /// Source potentials `u_i` with `u_i + v_j <= c_ij`, tight on the basis.
    pub u: Vec<f64>,
    /// Sink potentials `v_j`.
    pub v: Vec<f64>,
    pub iterations: usize,
}

pub(crate) struct TransportSimplex<'a> {
    ns: usize,
    nt: usize,
    n_real: usize,
    root: usize,
    cost: &'a [f64],
    art_src: Vec<usize>,
    art_tgt: Vec<usize>,
    art_cost: Vec<f64>,
    supply: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    block_size: usize,
    next_arc: usize,
    eps: f64,
    // pivot scratch
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl<'a> TransportSimplex<'a> {
    /// `cost` is row-major `ns × nt`; `supply` has length `ns` and `demand`
    /// length `nt`, with equal totals.
    pub fn new(cost: &'a [f64], supply: &[f64], demand: &[f64]) -> Self {
        let ns = supply.len();
        let nt = demand.len();
        assert!(ns > 0 && nt > 0);
        assert_eq!(cost.len(), ns * nt);
        let n_nodes = ns + nt;
        let n_real = ns * nt;
        let root = n_nodes;

        let max_cost = cost.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        let art = (max_cost + 1.0) * n_nodes as f64;
        let eps = 64.0 * f64::EPSILON * art;

        let mut s = Self {
            ns,
            nt,
            n_real,
            root,
            cost,
            art_src: vec![0; n_nodes],
            art_tgt: vec![0; n_nodes],
            art_cost: vec![0.0; n_nodes],
            supply: supply.iter().copied().chain(demand.iter().map(|d| -d)).chain([0.0]).collect(),
            flow: vec![0.0; n_real + n_nodes],
            state: vec![STATE_LOWER; n_real + n_nodes],
            pi: vec![0.0; n_nodes + 1],
            parent: vec![NONE; n_nodes + 1],
            pred: vec![NONE; n_nodes + 1],
            pred_dir: vec![DIR_UP; n_nodes + 1],
            thread: vec![0; n_nodes + 1],
            rev_thread: vec![0; n_nodes + 1],
            succ_num: vec![1; n_nodes + 1],
            last_succ: vec![0; n_nodes + 1],
            dirty_revs: Vec::new(),
            block_size: ((n_real as f64).sqrt().ceil() as usize).max(10).min(n_real),
            next_arc: 0,
            eps,
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
        };

        // Root with one artificial arc to every node.
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = n_nodes + 1;
        s.last_succ[root] = root - 1;
        for u in 0..n_nodes {
            let e = n_real + u;
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if s.supply[u] >= 0.0 {
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.art_src[u] = u;
                s.art_tgt[u] = root;
                s.flow[e] = s.supply[u];
                s.art_cost[u] = 0.0;
            } else {
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art;
                s.art_src[u] = root;
                s.art_tgt[u] = u;
                s.flow[e] = -s.supply[u];
                s.art_cost[u] = art;
            }
        }
        s
    }

    #[inline]
    fn src(&self, e: usize) -> usize {
        if e < self.n_real {
            e / self.nt
        } else {
            self.art_src[e - self.n_real]
        }
    }

    #[inline]
    fn tgt(&self, e: usize) -> usize {
        if e < self.n_real {
            self.ns + e % self.nt
        } else {
            self.art_tgt[e - self.n_real]
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.n_real {
            self.cost[e]
        } else {
            self.art_cost[e - self.n_real]
        }
    }

    /// Block-search pricing over the real arcs.
    fn find_entering_arc(&mut self) -> bool {
        let n = self.n_real;
        let nt = self.nt;
        let ns = self.ns;
        let mut min = -self.eps;
        let mut best = NONE;
        let mut cnt = self.block_size;
        let mut e = self.next_arc;
        let mut i = e / nt;
        let mut j = e % nt;
        for _ in 0..n {
            if self.state[e] == STATE_LOWER {
                let c = self.cost[e] + self.pi[i] - self.pi[ns + j];
                if c < min {
                    min = c;
                    best = e;
                }
            }
            e += 1;
            j += 1;
            if j == nt {
                j = 0;
                i += 1;
                if e == n {
                    e = 0;
                    i = 0;
                }
            }
            cnt -= 1;
            if cnt == 0 {
                if best != NONE {
                    self.next_arc = e;
                    self.in_arc = best;
                    return true;
                }
                cnt = self.block_size;
            }
        }
        if best != NONE {
            self.next_arc = e;
            self.in_arc = best;
            return true;
        }
        false
    }

    fn find_join_node(&mut self) {
        let mut u = self.src(self.in_arc);
        let mut v = self.tgt(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Picks the last blocking arc along the cycle orientation, which keeps
    /// the spanning tree strongly feasible.
    fn find_leaving_arc(&mut self) -> bool {
        let first = self.src(self.in_arc);
        let second = self.tgt(self.in_arc);
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let delta = self.delta;
        if delta > 0.0 {
            self.flow[self.in_arc] += delta;
            let mut u = self.src(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
            u = self.tgt(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.state[out] = STATE_LOWER;
        self.flow[out] = 0.0;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.src(in_arc) { DIR_UP } else { DIR_DOWN };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue =
                if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };

            // Re-hang the stem between u_in and u_out.
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                // succ_num[u] - succ_num[p] is negative here; keep the
                // signed arithmetic explicit.
                tmp_sc = (tmp_sc as isize + self.succ_num[u] as isize - self.succ_num[p] as isize) as usize;
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.src(in_arc) { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in]
            - f64::from(self.pred_dir[self.u_in]) * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    /// Recomputes potentials along the tree from the root, removing drift
    /// accumulated by incremental updates.
    fn recompute_potentials(&mut self) {
        self.pi[self.root] = 0.0;
        let mut u = self.thread[self.root];
        while u != self.root {
            let p = self.parent[u];
            let c = self.arc_cost(self.pred[u]);
            self.pi[u] = if self.pred_dir[u] == DIR_UP { self.pi[p] - c } else { self.pi[p] + c };
            u = self.thread[u];
        }
    }

    /// Recomputes basic flows from the supplies by peeling subtrees in
    /// reverse preorder.
    fn recompute_flows(&mut self) -> f64 {
        let n_nodes = self.ns + self.nt;
        let mut excess: Vec<KahanSum> = (0..=n_nodes)
            .map(|u| {
                let mut k = KahanSum::new();
                k.add(self.supply[u]);
                k
            })
            .collect();
        let mut order = Vec::with_capacity(n_nodes);
        let mut u = self.thread[self.root];
        while u != self.root {
            order.push(u);
            u = self.thread[u];
        }
        let mut worst_negative: f64 = 0.0;
        for &u in order.iter().rev() {
            let e = self.pred[u];
            let x = excess[u].value();
            let f = if self.pred_dir[u] == DIR_UP { x } else { -x };
            worst_negative = worst_negative.min(f);
            self.flow[e] = f.max(0.0);
            let p = self.parent[u];
            excess[p].add(x);
        }
        worst_negative
    }

    #[cfg(test)]
    fn check_tree(&self) {
        let n = self.ns + self.nt + 1;
        // thread is a preorder cycle starting at root
        let mut seen = vec![false; n];
        let mut u = self.root;
        let mut count = 0;
        loop {
            assert!(!seen[u], "thread revisits {u}");
            seen[u] = true;
            count += 1;
            assert_eq!(self.rev_thread[self.thread[u]], u);
            u = self.thread[u];
            if u == self.root {
                break;
            }
        }
        assert_eq!(count, n);
        // subtree sizes and last successors
        for v in 0..n {
            let mut size = 1;
            let mut w = self.thread[v];
            let mut last = v;
            while w != self.root && self.is_descendant(w, v) {
                size += 1;
                last = w;
                w = self.thread[w];
            }
            assert_eq!(self.succ_num[v], size, "succ_num of {v}");
            assert_eq!(self.last_succ[v], last, "last_succ of {v}");
            if v != self.root {
                let e = self.pred[v];
                let (s, t) = (self.src(e), self.tgt(e));
                let p = self.parent[v];
                if self.pred_dir[v] == DIR_UP {
                    assert_eq!((s, t), (v, p));
                } else {
                    assert_eq!((s, t), (p, v));
                }
                assert_eq!(self.state[e], STATE_TREE);
            }
        }
    }

    #[cfg(test)]
    fn is_descendant(&self, mut w: usize, v: usize) -> bool {
        while w != NONE {
            if w == v {
                return true;
            }
            w = self.parent[w];
        }
        false
    }

    fn pivot_loop(&mut self, max_iter: usize, iterations: &mut usize) -> Result<(), SimplexError> {
        while self.find_entering_arc() {
            *iterations += 1;
            if *iterations > max_iter {
                return Err(SimplexError::IterationLimit(max_iter));
            }
            self.find_join_node();
            if !self.find_leaving_arc() {
                // Uncapacitated transportation problems cannot be unbounded.
                unreachable!("no blocking arc on a transportation cycle");
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            #[cfg(test)]
            if self.n_real <= 400 {
                self.check_tree();
            }
        }
        Ok(())
    }

    pub fn solve(mut self) -> Result<SimplexSolution, SimplexError> {
        let max_iter = 50 * self.n_real + 10_000;
        let mut iterations = 0;
        // Re-price after cleaning up floating-point drift; a couple of rounds
        // is always enough in practice.
        for _ in 0..8 {
            self.pivot_loop(max_iter, &mut iterations)?;
            self.recompute_potentials();
            let worst = self.recompute_flows();
            let scale = self.supply.iter().fold(1.0f64, |m, s| m.max(s.abs()));
            if worst < -1e-9 * scale {
                return Err(SimplexError::Infeasible(worst));
            }
            if !self.find_entering_arc() {
                break;
            }
            // An improving arc survived the cleanup; keep pivoting from it.
            self.next_arc = self.in_arc;
        }
        for u in 0..self.ns + self.nt {
            let e = self.n_real + u;
            if self.state[e] == STATE_TREE && self.flow[e] > 1e-9 * (1.0 + self.supply[u].abs()) {
                return Err(SimplexError::Infeasible(self.flow[e]));
            }
        }

        let mut basis = Vec::with_capacity(self.ns + self.nt);
        for u in 0..self.ns + self.nt {
            let e = self.pred[u];
            if e < self.n_real {
                basis.push((e / self.nt, e % self.nt, self.flow[e]));
            }
        }
        basis.sort_by_key(|&(i, j, _)| (i, j));
        let u = (0..self.ns).map(|i| -self.pi[i]).collect();
        let v = (0..self.nt).map(|j| self.pi[self.ns + j]).collect();
        Ok(SimplexSolution { basis, u, v, iterations })
    }
}
