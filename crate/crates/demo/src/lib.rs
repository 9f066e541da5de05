//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The plain-Rust layer ([`ToyFit`], [`surface`], [`binomial`]) carries the
//! logic and is tested natively; the `#[wasm_bindgen]` items only convert
//! errors and types.
//!
//! Grids are `res x res` cell centres over the toy box, row-major with the
//! first row at the top (largest `x2`), ready for an `ImageData` buffer.

use rarebound::blackbox::{toy_distribution, toy_domain, toy_f, toy_objective};
use rarebound::bounds::binomial_upper_bound;
use rarebound::campaign::{build_design, CampaignConfig};
use rarebound::error::Result;
use rarebound::kriging::GpModel;
use rarebound::mbis::{is_member, run_mbis, KappaRule, MbisConfig, MbisResult};
use wasm_bindgen::prelude::*;

fn grid_points(res: usize) -> Vec<Vec<f64>> {
    let dom = toy_domain();
    let (lo, hi) = (dom.lower(), dom.upper());
    let hx = (hi[0] - lo[0]) / res as f64;
    let hy = (hi[1] - lo[1]) / res as f64;
    let mut pts = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            pts.push(vec![lo[0] + (i as f64 + 0.5) * hx, hi[1] - (j as f64 + 0.5) * hy]);
        }
    }
    pts
}

/// The toy function on the display grid.
pub fn surface(res: usize) -> Vec<f64> {
    grid_points(res).iter().map(|p| toy_f(p[0], p[1])).collect()
}

pub fn binomial(t: u32, n: u32, alpha: f64) -> Result<f64> {
    binomial_upper_bound(u64::from(t), u64::from(n), alpha)
}

/// A Kriging model of the toy function on an LHS-maximin design.
pub struct ToyFit {
    model: GpModel,
}

impl ToyFit {
    pub fn new(n: usize, seed: u64, anneal_iterations: usize) -> Result<Self> {
        let config = CampaignConfig { anneal_iterations, ..CampaignConfig::default() };
        let obj = toy_objective(n);
        let model = build_design(&obj, &toy_distribution(), &config, n, seed)?;
        Ok(ToyFit { model })
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    /// Posterior mean and standard deviation on the display grid.
    pub fn mean_sd(&self, res: usize) -> (Vec<f64>, Vec<f64>) {
        self.model
            .predict_many(&grid_points(res))
            .into_iter()
            .map(|(m, v)| (m, v.max(0.0).sqrt()))
            .unzip()
    }

    /// 1 where the grid cell centre is in the critical region.
    pub fn region_mask(&self, res: usize, rho: f64, kappa: f64) -> Vec<u8> {
        self.model
            .predict_many(&grid_points(res))
            .into_iter()
            .map(|(m, v)| u8::from(is_member(m, v.max(0.0).sqrt(), rho, kappa)))
            .collect()
    }

    pub fn mbis(&self, rho: f64, kappa: f64, m: usize, m_region: usize, alpha: f64, beta: f64, seed: u64) -> Result<MbisResult> {
        let obj = toy_objective(m);
        let config = MbisConfig {
            m,
            m_region,
            kappa: KappaRule::Fixed { kappa },
            alpha,
            beta,
            ..MbisConfig::default()
        };
        run_mbis(&self.model, &obj, &toy_distribution(), rho, &config, seed)
    }
}

fn js(e: rarebound::error::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = toySurface)]
pub fn toy_surface(res: usize) -> Vec<f64> {
    surface(res)
}

#[wasm_bindgen(js_name = binomialBound)]
pub fn binomial_bound(t: u32, n: u32, alpha: f64) -> Result<f64, JsError> {
    binomial(t, n, alpha).map_err(js)
}

#[wasm_bindgen]
pub struct Demo {
    fit: ToyFit,
}

#[wasm_bindgen]
impl Demo {
    /// Evaluates the toy function on an `n`-point design and fits the model.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, seed: u32, anneal_iterations: usize) -> Result<Demo, JsError> {
        ToyFit::new(n, u64::from(seed), anneal_iterations).map(|fit| Demo { fit }).map_err(js)
    }

    /// Design coordinates, flattened `x1, x2, x1, x2, ...`.
    pub fn points(&self) -> Vec<f64> {
        self.fit.model().points().iter().flatten().copied().collect()
    }

    pub fn mean(&self, res: usize) -> Vec<f64> {
        self.fit.mean_sd(res).0
    }

    pub fn sd(&self, res: usize) -> Vec<f64> {
        self.fit.mean_sd(res).1
    }

    pub fn theta(&self) -> f64 {
        self.fit.model().kernel().theta[0]
    }

    #[wasm_bindgen(js_name = regionMask)]
    pub fn region_mask(&self, res: usize, rho: f64, kappa: f64) -> Vec<u8> {
        self.fit.region_mask(res, rho, kappa)
    }

    /// Runs importance sampling in the region and returns the report as JSON.
    #[allow(clippy::too_many_arguments)]
    pub fn mbis(&self, rho: f64, kappa: f64, m: usize, m_region: usize, alpha: f64, beta: f64, seed: u32) -> Result<String, JsError> {
        let res = self.fit.mbis(rho, kappa, m, m_region, alpha, beta, u64::from(seed)).map_err(js)?;
        res.to_json().map_err(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout() {
        let pts = grid_points(4);
        assert_eq!(pts.len(), 16);
        assert_eq!(pts[0], vec![-7.5, 7.5]);
        assert_eq!(pts[15], vec![7.5, -7.5]);
        assert_eq!(surface(4)[5], toy_f(-2.5, 2.5));
    }

    #[test]
    fn fit_and_bound() {
        let fit = ToyFit::new(30, 1, 500).unwrap();
        let (m, s) = fit.mean_sd(8);
        assert_eq!(m.len(), 64);
        assert!(s.iter().all(|v| *v >= 0.0));
        let mask = fit.region_mask(8, 0.01, 3.0);
        assert!(mask.iter().all(|v| *v <= 1));
        let r = fit.mbis(0.01, 3.0, 20, 20_000, 0.01, 0.01, 2).unwrap();
        assert!(r.bound > 0.0 && r.bound <= 1.0);
        assert_eq!(r.budget_used, 20);
    }

    #[test]
    fn binomial_passthrough() {
        assert!((binomial(0, 100, 0.02).unwrap() - 0.03835).abs() < 1e-4);
        assert!(binomial(0, 0, 0.02).is_err());
    }
}
