//! Two-stage Normalized attack: pick the direction `unit(AR) + lambda * delta`
//! (stage 1), then the magnitude `zeta` of the submitted update (stage 2),
//! each by hill-climbing the angular deviation of the aggregate.

use crate::error::{FrlError, Result};
use crate::vector::ParamVector;

use super::{coordinate_search, deviation_objective, AttackContext, AttackSpec, Crafted, SearchResult, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1 {
    pub lambda: f64,
    pub direction: ParamVector,
    pub search: SearchResult,
}

fn unit_or_zero(v: &ParamVector) -> ParamVector {
    v.unit().unwrap_or_else(|| ParamVector::zeros(v.dim()))
}

fn direction(base_unit: &ParamVector, lambda: f64, delta: &ParamVector) -> ParamVector {
    let mut g = base_unit.clone();
    g.axpy(lambda, delta);
    g
}

/// Stage 1: search `lambda` for `g_j = unit(AR) + lambda * delta`.
pub fn normalized_stage1(
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
    delta: &ParamVector,
    normalized: bool,
) -> Result<Stage1> {
    let before = ctx.pre_attack_aggregate()?;
    let base = unit_or_zero(&before);
    let search = coordinate_search(spec.search(spec.lambda0, spec.lambda0, 0.0), |lambda| {
        let after = ctx.probe(&direction(&base, lambda, delta))?;
        Ok(deviation_objective(&before, &after, normalized).value)
    })?;
    Ok(Stage1 { lambda: search.best, direction: direction(&base, search.best, delta), search })
}

/// Stage 2: search `zeta` for `g~_j = zeta * g_j / |g_j|`.
pub fn normalized_stage2(
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
    g_j: &ParamVector,
    start: f64,
    step: f64,
    normalized: bool,
) -> Result<Crafted> {
    let unit = g_j
        .unit()
        .ok_or_else(|| FrlError::Contract("stage 2 needs a non-zero direction".into()))?;
    let before = ctx.pre_attack_aggregate()?;
    let search = coordinate_search(spec.search(start, step, 1.0), |zeta| {
        Ok(deviation_objective(&before, &ctx.probe(&unit.scaled(zeta))?, normalized).value)
    })?;
    Ok(Crafted { update: unit.scaled(search.best), search })
}

/// Runs the stages selected by `spec.variant`:
/// I = stage 1 only; II = stage 2 on `unit(AR) + lambda0 * delta`;
/// III = both stages on the unnormalized objective; IV = both, normalized.
pub fn normalized_attack(ctx: &AttackContext<'_>, spec: &AttackSpec, delta: &ParamVector) -> Result<Crafted> {
    let normalized = spec.variant != Variant::III;
    let g_j = match spec.variant {
        Variant::II => {
            let base = unit_or_zero(&ctx.pre_attack_aggregate()?);
            direction(&base, spec.lambda0, delta)
        }
        _ => {
            let s1 = normalized_stage1(ctx, spec, delta, normalized)?;
            if spec.variant == Variant::I {
                return Ok(Crafted { update: s1.direction, search: s1.search });
            }
            s1.direction
        }
    };
    if g_j.norm() == 0.0 {
        return Ok(Crafted {
            update: g_j,
            search: SearchResult { best: 0.0, objective: 0.0, probes: vec![] },
        });
    }
    // zeta = |g_j| reproduces the stage-1 update; search around it.
    normalized_stage2(ctx, spec, &g_j, g_j.norm(), spec.zeta0, normalized)
}
