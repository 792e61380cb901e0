//! Deterministic integration over the built-in DGP covariate law
//! (`W1 ~ U(-1, 1)`, `W2 ~ N(0, 1)`), written without the library's helpers.

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Law {
    pub g0: [f64; 3],
    pub q0: [f64; 6],
    pub bound: f64,
}

impl Law {
    pub fn dgp_a() -> Self {
        Self { g0: [0.1, 0.6, -0.5], q0: [-0.4, 0.7, 0.8, -0.5, 0.3, 0.4], bound: 0.2 }
    }

    pub fn dgp_b() -> Self {
        Self { g0: [-1.5, 1.5, 2.5], q0: [-0.3, 0.8, 0.6, 0.5, -0.2, 0.3], bound: 0.01 }
    }

    pub fn g(&self, w1: f64, w2: f64) -> f64 {
        expit(self.g0[0] + self.g0[1] * w1 + self.g0[2] * w2).clamp(self.bound, 1.0 - self.bound)
    }

    pub fn q(&self, a: f64, w1: f64, w2: f64) -> f64 {
        let c = &self.q0;
        expit(c[0] + c[1] * a + c[2] * w1 + c[3] * w2 + a * (c[4] * w1 + c[5] * w2))
    }

    /// `E[h(W1, W2)]` by the midpoint rule; the normal is truncated at ±8.
    pub fn expect(&self, h: impl Fn(&Self, f64, f64) -> f64) -> f64 {
        const N1: usize = 1000;
        const N2: usize = 4000;
        let d1 = 2.0 / N1 as f64;
        let d2 = 16.0 / N2 as f64;
        let mut total = 0.0;
        let mut mass = 0.0;
        for j in 0..N2 {
            let w2 = -8.0 + (j as f64 + 0.5) * d2;
            let dens = (-0.5 * w2 * w2).exp() * d2;
            let mut inner = 0.0;
            for i in 0..N1 {
                let w1 = -1.0 + (i as f64 + 0.5) * d1;
                inner += h(self, w1, w2);
            }
            total += dens * inner / N1 as f64;
            mass += dens;
        }
        total / mass
    }
}

pub struct Moments {
    pub tsm1: f64,
    pub tsm0: f64,
    pub var_tsm1: f64,
    pub var_tsm0: f64,
    pub cov_tsm: f64,
    pub var_ate: f64,
}

pub fn moments(law: &Law) -> Moments {
    let tsm1 = law.expect(|l, a, b| l.q(1.0, a, b));
    let tsm0 = law.expect(|l, a, b| l.q(0.0, a, b));
    let e11 = law.expect(|l, a, b| {
        let q = l.q(1.0, a, b);
        q * (1.0 - q) / l.g(a, b) + q * q
    });
    let e00 = law.expect(|l, a, b| {
        let q = l.q(0.0, a, b);
        q * (1.0 - q) / (1.0 - l.g(a, b)) + q * q
    });
    let e10 = law.expect(|l, a, b| l.q(1.0, a, b) * l.q(0.0, a, b));
    let var_tsm1 = e11 - tsm1 * tsm1;
    let var_tsm0 = e00 - tsm0 * tsm0;
    let cov_tsm = e10 - tsm1 * tsm0;
    Moments { tsm1, tsm0, var_tsm1, var_tsm0, cov_tsm, var_ate: var_tsm1 + var_tsm0 - 2.0 * cov_tsm }
}
