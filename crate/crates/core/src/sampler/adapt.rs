//! Warmup adaptation: dual-averaging step size and windowed diagonal metric.

/// Nesterov dual averaging of `log ε` toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    mu: f64,
    delta: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(delta: f64) -> Self {
        Self {
            mu: 0.0,
            delta,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Restart around `log(10 ε)`.
    pub fn restart(&mut self, epsilon: f64) {
        self.mu = (10.0 * epsilon).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Final step size after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator of per-coordinate variances.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(q) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }
}

/// Windowed variance estimation for the inverse diagonal metric.
///
/// Warmup is split into an initial fast interval (75 iterations), a series
/// of slow windows starting at 25 iterations and doubling, and a terminal
/// fast interval (50 iterations). When warmup is too short for these
/// defaults the intervals become 15% / 75% / 10% of warmup. At the end of
/// each slow window the metric is set to the regularized sample variance
/// `n/(n+5)·var + 1e-3·5/(n+5)`.
#[derive(Debug, Clone)]
pub(crate) struct WindowedVariance {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window_end: usize,
    counter: usize,
    est: Welford,
}

impl WindowedVariance {
    pub fn new(dim: usize, num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        if init_buffer + term_buffer + base_window > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base_window = num_warmup.saturating_sub(init_buffer + term_buffer);
        }
        Self {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window_end: (init_buffer + base_window).saturating_sub(1),
            counter: 0,
            est: Welford::new(dim),
        }
    }

    fn last_slow_end(&self) -> usize {
        self.num_warmup.saturating_sub(self.term_buffer + 1)
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter + self.term_buffer < self.num_warmup
            && self.counter != self.num_warmup
    }

    fn at_window_end(&self) -> bool {
        self.counter == self.next_window_end && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        if self.next_window_end == self.last_slow_end() {
            return;
        }
        self.window_size *= 2;
        self.next_window_end = self.counter + self.window_size;
        if self.next_window_end != self.last_slow_end() {
            let boundary = self.next_window_end + 2 * self.window_size;
            if boundary + self.term_buffer >= self.num_warmup {
                self.next_window_end = self.last_slow_end();
            }
        }
    }

    /// Records a warmup draw. Returns `true` when `inv_metric` was updated.
    pub fn learn(&mut self, inv_metric: &mut [f64], q: &[f64]) -> bool {
        if self.in_window() {
            self.est.add(q);
        }
        if self.at_window_end() {
            self.compute_next_window();
            let n = self.est.n as f64;
            if self.est.n >= 2 {
                for (v, m2) in inv_metric.iter_mut().zip(&self.est.m2) {
                    let var = m2 / (n - 1.0);
                    *v = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
                }
            }
            self.est.restart();
            self.counter += 1;
            return true;
        }
        self.counter += 1;
        false
    }
}
