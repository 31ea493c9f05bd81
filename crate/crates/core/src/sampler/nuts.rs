//! Hamiltonian transitions with a diagonal Euclidean metric.
//!
//! The dynamic scheme follows the multinomial no-U-turn sampler: the
//! trajectory doubles in a random direction, states are selected with
//! probability proportional to `exp(−H)` (biased progressive sampling
//! between subtrees at the top level, uniform-progressive inside subtrees),
//! and expansion stops on the generalized U-turn criterion, which is also
//! checked across the seams of merged subtrees.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Target;
use crate::truncnorm::log_sum_exp;

/// Energy error above which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    pub fn new<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let dim = q.len();
        let mut grad = vec![0.0; dim];
        let logp = match target.log_density_grad(&q, &mut grad) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        };
        Self {
            q,
            p: vec![0.0; dim],
            grad,
            logp,
        }
    }
}

/// Outcome of one transition.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
    pub divergent: bool,
}

pub(crate) struct Hamiltonian<'a, T: Target + ?Sized> {
    pub target: &'a T,
    pub inv_metric: Vec<f64>,
}

impl<T: Target + ?Sized> Hamiltonian<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_metric)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    pub fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, z: &mut Point, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let e: f64 = rng.sample(StandardNormal);
            *p = e / m.sqrt();
        }
    }

    pub fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = match self.target.log_density_grad(&z.q, &mut z.grad) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        };
        if z.logp.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.grad) {
                *p += 0.5 * eps * g;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Mutable bookkeeping shared across a tree build.
struct TreeStats {
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Boundary momenta and the momentum sum of a subtree.
struct Edges {
    p_beg: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_end: Vec<f64>,
    rho: Vec<f64>,
}

impl<T: Target + ?Sized> Hamiltonian<'_, T> {
    /// Builds a subtree of `2^depth` leapfrog steps from `z`, which is moved
    /// to the far end. Returns `(valid, edges, proposal, log_sum_weight)`.
    fn build_tree<R: Rng + ?Sized>(
        &self,
        depth: usize,
        z: &mut Point,
        eps: f64,
        stats: &mut TreeStats,
        rng: &mut R,
    ) -> (bool, Option<Edges>, Option<Point>, f64) {
        if depth == 0 {
            self.leapfrog(z, eps);
            stats.n_leapfrog += 1;
            let h = self.energy(z);
            if h - stats.h0 > MAX_DELTA_H {
                stats.divergent = true;
            }
            let log_w = stats.h0 - h;
            stats.sum_metro_prob += if log_w > 0.0 { 1.0 } else { log_w.exp() };
            if stats.divergent {
                return (false, None, None, f64::NEG_INFINITY);
            }
            let ps = self.p_sharp(&z.p);
            let edges = Edges {
                p_beg: z.p.clone(),
                p_sharp_beg: ps.clone(),
                p_end: z.p.clone(),
                p_sharp_end: ps,
                rho: z.p.clone(),
            };
            return (true, Some(edges), Some(z.clone()), log_w);
        }
        let (ok_init, init, prop_init, lsw_init) = self.build_tree(depth - 1, z, eps, stats, rng);
        if !ok_init {
            return (false, None, None, f64::NEG_INFINITY);
        }
        let (ok_final, fin, prop_final, lsw_final) = self.build_tree(depth - 1, z, eps, stats, rng);
        if !ok_final {
            return (false, None, None, f64::NEG_INFINITY);
        }
        let (init, fin) = (init.expect("valid subtree"), fin.expect("valid subtree"));
        let lsw = log_sum_exp(lsw_init, lsw_final);
        let proposal = if lsw_final > lsw || rng.random::<f64>() < (lsw_final - lsw).exp() {
            prop_final
        } else {
            prop_init
        };
        let rho = add(&init.rho, &fin.rho);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho);
        let rho_ext = add(&init.rho, &fin.p_beg);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&fin.rho, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &rho_ext);
        let edges = Edges {
            p_beg: init.p_beg,
            p_sharp_beg: init.p_sharp_beg,
            p_end: fin.p_end,
            p_sharp_end: fin.p_sharp_end,
            rho,
        };
        (persist, Some(edges), proposal, lsw)
    }

    /// One no-U-turn transition from `z` (momentum is resampled).
    pub fn nuts_transition<R: Rng + ?Sized>(
        &self,
        z: &mut Point,
        eps: f64,
        max_depth: usize,
        rng: &mut R,
    ) -> TransitionInfo {
        self.sample_momentum(z, rng);
        let mut stats = TreeStats {
            h0: self.energy(z),
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let ps = self.p_sharp(&z.p);
        // Momenta at the backward-most and forward-most states.
        let mut bck_p_end = z.p.clone();
        let mut bck_p_sharp_end = ps.clone();
        let mut fwd_p_end = z.p.clone();
        let mut fwd_p_sharp_end = ps;
        let mut rho = z.p.clone();
        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut sample = z.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        while depth < max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let (valid, edges, proposal, lsw_sub) = if forward {
                self.build_tree(depth, &mut z_fwd, eps, &mut stats, rng)
            } else {
                self.build_tree(depth, &mut z_bck, -eps, &mut stats, rng)
            };
            if !valid {
                break;
            }
            depth += 1;
            let edges = edges.expect("valid subtree");
            if lsw_sub > log_sum_weight || rng.random::<f64>() < (lsw_sub - log_sum_weight).exp() {
                sample = proposal.expect("valid subtree");
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_sub);

            // (p_sharp, p) at the four edges of the old and new parts, ordered
            // backward → forward.
            let (rho_bck, rho_fwd, bck_bck, bck_fwd, fwd_bck, fwd_fwd);
            if forward {
                // Old trajectory is the backward part; the new subtree runs forward.
                rho_bck = rho.clone();
                rho_fwd = edges.rho;
                bck_bck = (bck_p_sharp_end.clone(), bck_p_end.clone());
                bck_fwd = (fwd_p_sharp_end.clone(), fwd_p_end.clone());
                fwd_bck = (edges.p_sharp_beg.clone(), edges.p_beg.clone());
                fwd_fwd = (edges.p_sharp_end.clone(), edges.p_end.clone());
                fwd_p_end = edges.p_end;
                fwd_p_sharp_end = edges.p_sharp_end;
            } else {
                // New subtree runs backward; its "end" is the far backward edge.
                rho_fwd = rho.clone();
                rho_bck = edges.rho;
                fwd_fwd = (fwd_p_sharp_end.clone(), fwd_p_end.clone());
                fwd_bck = (bck_p_sharp_end.clone(), bck_p_end.clone());
                bck_fwd = (edges.p_sharp_beg.clone(), edges.p_beg.clone());
                bck_bck = (edges.p_sharp_end.clone(), edges.p_end.clone());
                bck_p_end = edges.p_end;
                bck_p_sharp_end = edges.p_sharp_end;
            }
            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&bck_bck.0, &fwd_fwd.0, &rho);
            let rho_ext = add(&rho_bck, &fwd_bck.1);
            persist &= no_u_turn(&bck_bck.0, &fwd_bck.0, &rho_ext);
            let rho_ext = add(&rho_fwd, &bck_fwd.1);
            persist &= no_u_turn(&bck_fwd.0, &fwd_fwd.0, &rho_ext);
            if !persist {
                break;
            }
        }
        *z = sample;
        TransitionInfo {
            accept_stat: if stats.n_leapfrog > 0 {
                stats.sum_metro_prob / stats.n_leapfrog as f64
            } else {
                0.0
            },
            n_leapfrog: stats.n_leapfrog,
            depth,
            divergent: stats.divergent,
        }
    }

    /// HMC with a Metropolis correction. The number of leapfrog steps is
    /// drawn uniformly from `1..=steps` so that a trajectory length close to
    /// a period of the dynamics cannot freeze the chain.
    pub fn static_transition<R: Rng + ?Sized>(
        &self,
        z: &mut Point,
        eps: f64,
        steps: usize,
        rng: &mut R,
    ) -> TransitionInfo {
        self.sample_momentum(z, rng);
        let h0 = self.energy(z);
        let mut prop = z.clone();
        let mut divergent = false;
        let mut n = 0;
        for _ in 0..rng.random_range(1..=steps) {
            self.leapfrog(&mut prop, eps);
            n += 1;
            if self.energy(&prop) - h0 > MAX_DELTA_H {
                divergent = true;
                break;
            }
        }
        let log_a = if divergent {
            f64::NEG_INFINITY
        } else {
            h0 - self.energy(&prop)
        };
        let accept = log_a.min(0.0).exp();
        if rng.random::<f64>() < accept {
            *z = prop;
        }
        TransitionInfo {
            accept_stat: accept,
            n_leapfrog: n,
            depth: 0,
            divergent,
        }
    }

    /// Heuristic initial step size: doubles or halves `eps` until the
    /// acceptance of a single leapfrog step crosses 0.8.
    pub fn init_step_size<R: Rng + ?Sized>(
        &self,
        z: &Point,
        mut eps: f64,
        rng: &mut R,
    ) -> Result<f64, String> {
        if !(eps > 0.0 && eps < 1e7) {
            return Ok(eps);
        }
        let threshold = 0.8f64.ln();
        let mut direction = 0i32;
        loop {
            let mut trial = z.clone();
            self.sample_momentum(&mut trial, rng);
            let h0 = self.energy(&trial);
            self.leapfrog(&mut trial, eps);
            let delta = h0 - self.energy(&trial);
            if direction == 0 {
                direction = if delta > threshold { 1 } else { -1 };
            }
            if direction == 1 && !(delta > threshold) {
                break;
            }
            if direction == -1 && !(delta < threshold) {
                break;
            }
            eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
            if eps > 1e7 {
                return Err("step size diverged upward; the posterior may be improper".into());
            }
            if eps == 0.0 {
                return Err("no acceptably small step size".into());
            }
        }
        Ok(eps)
    }
}
