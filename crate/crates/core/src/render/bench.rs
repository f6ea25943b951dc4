//! Quality-versus-time sweeps over sampling strategies.

use std::fmt::Write;

use crate::field::Field;
use crate::sampling::StrategyConfig;

use super::{psnr, render_tomography, RenderConfig, RenderError};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub strategy: String,
    pub spp: usize,
    pub psnr: f64,
    pub seconds: f64,
    pub prim_tests: u64,
}

/// Powers of two from 1 up to `max_spp`.
pub fn spp_ladder(max_spp: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |s| Some(s * 2)).take_while(|&s| s <= max_spp).collect()
}

/// Renders tomography for every strategy and spp against the deterministic
/// image of the same configuration.
pub fn bench(field: &Field, cfg: &RenderConfig, strategies: &[StrategyConfig], max_spp: usize) -> Result<Vec<BenchRow>, RenderError> {
    let reference = render_tomography(field, &RenderConfig { strategy: StrategyConfig::deterministic(), spp: 1, ..cfg.clone() })?;
    let mut rows = Vec::new();
    for s in strategies {
        for spp in spp_ladder(max_spp) {
            let out = render_tomography(field, &RenderConfig { strategy: *s, spp, ..cfg.clone() })?;
            rows.push(BenchRow {
                strategy: s.label(),
                spp,
                psnr: psnr(&out.image, &reference.image, 1.0),
                seconds: out.seconds,
                prim_tests: out.stats.prim_tests,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("strategy,spp,psnr_db,seconds,prim_tests\n");
    for r in rows {
        writeln!(s, "{},{},{:.4},{:.6},{}", r.strategy, r.spp, r.psnr, r.seconds, r.prim_tests).unwrap();
    }
    s
}
