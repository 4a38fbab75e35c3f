use std::collections::BTreeMap;

use serde::Serialize;

use super::analysis::*;
use super::ensemble::{run_ensemble, EnsembleSummary};
use super::plan::ExperimentPlan;
use crate::error::Result;
use crate::limit::{uniqueness_condition, LimitParams};
use crate::noise::GammaRule;

/// Status of one ladder entry; failed entries are kept, not dropped.
#[derive(Clone, Debug, Serialize)]
pub struct EntryStatus {
    pub label: String,
    pub ell: f64,
    pub ok: bool,
    pub error: Option<String>,
}

/// First-order term discrimination at the smallest scale.
#[derive(Clone, Debug, Serialize)]
pub struct Discrimination {
    pub ell: f64,
    pub main_rule: GammaRule,
    pub companion_rule: GammaRule,
    /// Field distances of the main ensemble to its own and the other limit.
    pub main_to_own: f64,
    pub main_to_other: f64,
    pub companion_to_own: f64,
    pub companion_to_other: f64,
    pub pass: bool,
}

pub struct ConvergeResult {
    pub entries: Vec<EntryStatus>,
    pub ensembles: Vec<EnsembleSummary>,
    pub companion: Option<EnsembleSummary>,
    pub energy: Vec<EnergyCheck>,
    pub martingales: Vec<Vec<MartingaleRow>>,
    pub limit: Option<LimitReference>,
    pub weak: Vec<WeakErrorTable>,
    pub discrimination: Option<Discrimination>,
    pub coefficients: Vec<CoefficientCheck>,
    pub verdicts: BTreeMap<String, bool>,
}

fn rule_label(r: &GammaRule) -> String {
    match r {
        GammaRule::Proportional { q0 } => format!("proportional(q0={q0})"),
        GammaRule::Subordinate { p } => format!("subordinate(p={p})"),
    }
}

/// Runs the whole study described by `plan`.
pub fn converge(plan: &ExperimentPlan, progress: &mut dyn FnMut(&str)) -> Result<ConvergeResult> {
    plan.validate()?;
    let main_rule = plan.noise.gamma_rule;
    let main_label = rule_label(&main_rule);
    let mut entries = Vec::new();
    let mut ensembles = Vec::new();
    for (i, &ell) in plan.ladder.iter().enumerate() {
        progress(&format!("ensemble {main_label} ell={ell}"));
        match run_ensemble(plan, &plan.noise_at(ell), i, plan.ensemble_size, &main_label) {
            Ok(e) => {
                entries.push(EntryStatus {
                    label: main_label.clone(),
                    ell,
                    ok: true,
                    error: None,
                });
                ensembles.push(e);
            }
            Err(err) => entries.push(EntryStatus {
                label: main_label.clone(),
                ell,
                ok: false,
                error: Some(err.to_string()),
            }),
        }
    }
    let all_ok = entries.iter().all(|e| e.ok);
    let mut verdicts = BTreeMap::new();
    verdicts.insert("ensembles_complete".to_string(), all_ok);

    let mut energy: Vec<EnergyCheck> = ensembles
        .iter()
        .map(|e| energy_check(e, plan.cfg.fourth_moment_cap))
        .collect();

    let mut martingales = Vec::new();
    if plan.diagnostics.martingales && !ensembles.is_empty() {
        for e in &ensembles {
            martingales.push(martingale_variance(e)?);
        }
        verdicts.insert(
            "martingale_bounds".into(),
            martingales.iter().flatten().all(|r| r.pass),
        );
        verdicts.insert(
            "martingale_decreasing".into(),
            all_ok && martingale_decreasing(&martingales),
        );
    }

    let own = LimitParams::for_rule(plan.cfg.nu, plan.noise.kappa, &main_rule);
    let coefficients: Vec<CoefficientCheck> = ensembles.iter().map(|e| coefficient_check(e, &own)).collect();
    if !coefficients.is_empty() {
        let tol = 1e-8 * (1.0 + plan.noise.kappa);
        verdicts.insert(
            "eddy_viscosity_matches".into(),
            coefficients.iter().all(|c| c.q_distance <= tol),
        );
    }

    let mut limit = None;
    let mut weak = Vec::new();
    let mut discrimination = None;
    let mut companion = None;
    if plan.weak_errors && !ensembles.is_empty() {
        progress("limit reference");
        let reference = limit_reference(plan, &own, &format!("limit[{main_label}]"))?;
        for e in &ensembles {
            weak.push(weak_error(&e.checkpoint_means(), &reference.means, e.ell(), &e.obs_names)?);
        }
        verdicts.insert(
            "weak_error_monotone".into(),
            all_ok && weak_error_monotone(&weak),
        );
        if let Some(rule) = plan.companion_rule {
            let comp_label = rule_label(&rule);
            let other = LimitParams::for_rule(plan.cfg.nu, plan.noise.kappa, &rule);
            let smallest = ensembles.last().expect("nonempty").ell();
            progress(&format!("companion {comp_label} ell={smallest}"));
            let noise = crate::noise::NoiseSpec {
                gamma_rule: rule,
                ..plan.noise_at(smallest)
            };
            let comp = run_ensemble(plan, &noise, plan.ladder.len(), plan.ensemble_size, &comp_label);
            match comp {
                Ok(c) => {
                    let other_ref = limit_reference(plan, &other, &format!("limit[{comp_label}]"))?;
                    let main_means = ensembles.last().expect("nonempty").checkpoint_means();
                    let comp_means = c.checkpoint_means();
                    let d = |m, r: &LimitReference| -> Result<f64> {
                        Ok(weak_error(m, &r.means, smallest, &c.obs_names)?.field_distance)
                    };
                    let main_to_own = d(&main_means, &reference)?;
                    let main_to_other = d(&main_means, &other_ref)?;
                    let companion_to_own = d(&comp_means, &other_ref)?;
                    let companion_to_other = d(&comp_means, &reference)?;
                    let pass = main_to_own < main_to_other && companion_to_own < companion_to_other;
                    verdicts.insert("first_order_discrimination".into(), pass);
                    energy.push(energy_check(&c, plan.cfg.fourth_moment_cap));
                    discrimination = Some(Discrimination {
                        ell: smallest,
                        main_rule,
                        companion_rule: rule,
                        main_to_own,
                        main_to_other,
                        companion_to_own,
                        companion_to_other,
                        pass,
                    });
                    entries.push(EntryStatus {
                        label: comp_label,
                        ell: smallest,
                        ok: true,
                        error: None,
                    });
                    companion = Some(c);
                }
                Err(err) => {
                    entries.push(EntryStatus {
                        label: comp_label,
                        ell: smallest,
                        ok: false,
                        error: Some(err.to_string()),
                    });
                    verdicts.insert("first_order_discrimination".into(), false);
                }
            }
        }
        limit = Some(reference);
    }
    if !energy.is_empty() {
        verdicts.insert("energy_mean_balance".into(), energy.iter().all(|c| c.mean_ok));
        verdicts.insert(
            "fourth_moment_cap".into(),
            energy.iter().all(|c| c.fourth_moment_ok()),
        );
        verdicts.insert("no_blow_up".into(), energy.iter().all(|c| c.failed == 0));
    }
    verdicts.insert(
        "limit_uniqueness".into(),
        uniqueness_condition(&own).pass,
    );
    Ok(ConvergeResult {
        entries,
        ensembles,
        companion,
        energy,
        martingales,
        limit,
        weak,
        discrimination,
        coefficients,
        verdicts,
    })
}
