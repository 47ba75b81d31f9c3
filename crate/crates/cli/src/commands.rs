use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use podhjb::dynamics::{write_trajectory_csv, ControlledSystem, Trajectory, CONTROL_COST_WEIGHT};
use podhjb::hjbsolve::{evaluate_cost, simulate_closed_loop, Feedback};
use podhjb::lqr::{compare_controls, solve_care, Alignment, LqrLaw};
use podhjb::pipeline::{self, PipelineConfig, TestCase};
use podhjb::pod::PodBasis;
use serde_json::{json, Value};

use crate::artifacts::{self as art, BasisBundle, PolicyBundle, SnapshotBundle, Stage};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub fn snapshots(rc: &RunConfig) -> CliResult<()> {
    let cfg = &rc.pipeline;
    art::ensure_dir(&rc.out)?;
    let clock = Instant::now();
    let sys = cfg.system()?;
    let snap = pipeline::snapshots(&sys, cfg)?;
    let seconds = clock.elapsed().as_secs_f64();
    let basis = pipeline::basis(&snap, cfg)?;
    art::write_json(&rc.out.join(art::SNAPSHOTS), &SnapshotBundle {
        config: cfg.clone(),
        snapshots: snap.clone(),
    })?;
    art::write_with(&rc.out.join(art::SPECTRUM), |w| basis.write_spectrum_csv(w))?;
    art::update_meta(
        &rc.out,
        "snapshots",
        cfg,
        json!({
            "trajectories": snap.trajectories(),
            "samples": snap.samples(),
            "dim": snap.dim(),
            "controls": snap.controls,
            "quotient_at_zero": cfg.quotient_at_zero,
            "seconds": seconds,
        }),
    )?;
    println!(
        "snapshots: p = {}, N = {}, n = {}, {} POD eigenvalues -> {}",
        snap.trajectories(),
        snap.samples(),
        snap.dim(),
        basis.len(),
        rc.out.display()
    );
    Ok(())
}

fn load_snapshots(rc: &RunConfig) -> CliResult<SnapshotBundle> {
    let path = rc.out.join(art::SNAPSHOTS);
    let bundle: SnapshotBundle = art::read_json(&path, "snapshot bundle", "snapshots")?;
    art::check_fresh(&path, Stage::Snapshots, &bundle.config, &rc.pipeline)?;
    Ok(bundle)
}

fn load_basis(rc: &RunConfig) -> CliResult<PodBasis> {
    let path = rc.out.join(art::BASIS);
    let bundle: BasisBundle = art::read_json(&path, "POD basis", "basis")?;
    art::check_fresh(&path, Stage::Basis, &bundle.config, &rc.pipeline)?;
    Ok(bundle.basis)
}

fn load_policy(rc: &RunConfig) -> CliResult<PolicyBundle> {
    let path = art::rank_dir(&rc.out, rc.pipeline.r).join(art::POLICY);
    let bundle: PolicyBundle = art::read_json(&path, "policy", "solve")?;
    art::check_fresh(&path, Stage::Solve, &bundle.config, &rc.pipeline)?;
    Ok(bundle)
}

pub fn basis(rc: &RunConfig) -> CliResult<()> {
    let cfg = &rc.pipeline;
    let snap = load_snapshots(rc)?.snapshots;
    let basis = pipeline::basis(&snap, cfg)?;
    art::write_json(&rc.out.join(art::BASIS), &BasisBundle {
        config: cfg.clone(),
        basis: basis.clone(),
    })?;
    art::write_with(&rc.out.join(art::SPECTRUM), |w| basis.write_spectrum_csv(w))?;
    let tails: Vec<f64> = (1..=basis.len()).map(|r| basis.tail(r)).collect();
    art::update_meta(
        &rc.out,
        "basis",
        cfg,
        json!({
            "modes": basis.len(),
            "tau": basis.tau,
            "eigenvalues": basis.eigenvalues,
            "tails": tails,
            "orthonormality_defect": basis.orthonormality_defect(),
        }),
    )?;
    println!(
        "basis: d = {} modes, lambda_1 = {:.4e}, tail(r = {}) = {:.4e}",
        basis.len(),
        basis.eigenvalues[0],
        cfg.r.min(basis.len()),
        basis.tail(cfg.r.min(basis.len()))
    );
    Ok(())
}

pub fn solve(rc: &RunConfig) -> CliResult<()> {
    let cfg = &rc.pipeline;
    let snap = load_snapshots(rc)?.snapshots;
    let basis = load_basis(rc)?;
    let sys = cfg.system()?;
    let outcome = pipeline::solve(&sys, &basis, &snap, cfg)?;
    let dir = art::rank_dir(&rc.out, cfg.r);
    art::ensure_dir(&dir)?;
    let grid = &outcome.grid;
    art::write_with(&dir.join(art::VALUE_CSV), |w| {
        art::write_nodal_csv(grid, &["v"], |i| outcome.value.values[i].to_string(), w)
    })?;
    art::write_with(&dir.join(art::POLICY_CSV), |w| {
        art::write_nodal_csv(
            grid,
            &["u", "control_index"],
            |i| format!("{},{}", outcome.table.controls[i], outcome.table.control_index[i]),
            w,
        )
    })?;
    art::write_json(&dir.join(art::POLICY), &PolicyBundle {
        config: cfg.clone(),
        snapshot_box: outcome.snapshot_box.clone(),
        grid: grid.clone(),
        table: outcome.table.clone(),
    })?;
    let v = &outcome.value;
    art::update_meta(
        &dir,
        "solve",
        cfg,
        json!({
            "nodes": grid.node_count,
            "cells_per_axis": grid.cells_per_axis,
            "k_r": grid.k_r,
            "h": v.h,
            "domain": grid.domain,
            "snapshot_box": outcome.snapshot_box,
            "iterations": v.iterations,
            "final_residual": v.final_residual,
            "converged": v.converged,
            "fixed_point_distance": v.fixed_point_distance(),
            "invariance": {
                "checked": outcome.invariance.checked,
                "violations": outcome.invariance.violations,
                "max_displacement": outcome.invariance.max_displacement,
            },
            "rejected_nodes": outcome.rejected_nodes,
            "eigenvalue_tail": outcome.eigenvalue_tail,
            "timings": outcome.timings,
        }),
    )?;
    println!(
        "solve r = {}: {} nodes, {} sweeps, residual {:.3e}, invariance violations {}/{} -> {}",
        cfg.r,
        grid.node_count,
        v.iterations,
        v.final_residual,
        outcome.invariance.violations,
        outcome.invariance.checked,
        dir.display()
    );
    if !v.converged {
        return Err(CliError::NotConverged {
            iterations: v.iterations,
            residual: v.final_residual,
            stop_tol: cfg.stop_tol,
        });
    }
    Ok(())
}

fn initial_state(sys: &ControlledSystem) -> CliResult<Vec<f64>> {
    sys.initial_state()
        .map(<[f64]>::to_vec)
        .ok_or_else(|| CliError::Config("system has no initial state".into()))
}

fn closed_loop(sys: &ControlledSystem, basis: &PodBasis, policy: &PolicyBundle, cfg: &PipelineConfig) -> CliResult<Trajectory> {
    let law = Feedback::new(basis, &policy.grid, &policy.table, sys.control_box())?;
    let y0 = initial_state(sys)?;
    Ok(simulate_closed_loop(sys, &law, &y0, cfg.t_e, cfg.dt, &cfg.integrator, cfg.sample_and_hold)?)
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> CliResult<()> {
    art::write_with(path, |w| write_trajectory_csv(traj, w))
}

pub fn simulate(rc: &RunConfig) -> CliResult<()> {
    let cfg = &rc.pipeline;
    let basis = load_basis(rc)?;
    let policy = load_policy(rc)?;
    let sys = cfg.system()?;
    let traj = closed_loop(&sys, &basis, &policy, cfg)?;
    let y0 = initial_state(&sys)?;
    let zero = |_: f64, _: &[f64]| 0.0;
    let free = simulate_closed_loop(&sys, &zero, &y0, cfg.t_e, cfg.dt, &cfg.integrator, cfg.sample_and_hold)?;
    let dir = art::rank_dir(&rc.out, cfg.r);
    write_trajectory(&dir.join(art::TRAJECTORY), &traj)?;
    write_trajectory(&dir.join(art::UNCONTROLLED), &free)?;
    let cost = evaluate_cost(&sys, &traj, cfg.lambda);
    let free_cost = evaluate_cost(&sys, &free, cfg.lambda);
    let terminal = sys.norm(traj.states.last().expect("non-empty trajectory"));
    let free_terminal = sys.norm(free.states.last().expect("non-empty trajectory"));
    art::update_meta(
        &dir,
        "simulate",
        cfg,
        json!({
            "cost": cost,
            "uncontrolled_cost": free_cost,
            "terminal_norm": terminal,
            "uncontrolled_terminal_norm": free_terminal,
            "sample_and_hold": cfg.sample_and_hold,
            "samples": traj.len(),
        }),
    )?;
    println!(
        "simulate r = {}: cost {:.6} (uncontrolled {:.6}), |y(t_e)| {:.4e} (uncontrolled {:.4e})",
        cfg.r, cost, free_cost, terminal, free_terminal
    );
    Ok(())
}

pub fn compare_lqr(rc: &RunConfig) -> CliResult<()> {
    let cfg = &rc.pipeline;
    if cfg.test != TestCase::Test2 {
        return Err(CliError::Config("compare-lqr needs the linear benchmark (--test test2)".into()));
    }
    let basis = load_basis(rc)?;
    let policy = load_policy(rc)?;
    let sys = cfg.system()?;
    let hjb = closed_loop(&sys, &basis, &policy, cfg)?;
    let (a, b) = sys.assemble_linear();
    let q = DMatrix::from_diagonal(&DVector::from_vec(sys.weight().to_vec()));
    let care = solve_care(&a, &b, &q, CONTROL_COST_WEIGHT, cfg.lambda)?;
    let y0 = initial_state(&sys)?;
    let lqr = simulate_closed_loop(&sys, &LqrLaw(&care), &y0, cfg.t_e, cfg.dt, &cfg.integrator, false)?;
    let cmp = compare_controls(&hjb.times, &hjb.controls, &lqr.times, &lqr.controls, Alignment::Fail)?;
    let dir = art::rank_dir(&rc.out, cfg.r);
    write_trajectory(&rc.out.join(art::LQR_TRAJECTORY), &lqr)?;
    art::write_with(&dir.join(art::RELATIVE_ERROR), |w| {
        writeln!(w, "t,u_hjb,u_lqr,relative_error")?;
        for k in 0..cmp.times.len() {
            writeln!(w, "{},{},{},{}", cmp.times[k], hjb.controls[k], lqr.controls[k], cmp.relative_errors[k])?;
        }
        Ok(())
    })?;
    art::write_with(&dir.join(art::STATE_DIFFERENCE), |w| {
        let n = sys.dim();
        let header: Vec<String> = (1..=n).map(|j| format!("e_{j}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (k, t) in hjb.times.iter().enumerate() {
            write!(w, "{t}")?;
            for (p, q) in hjb.states[k].iter().zip(&lqr.states[k]) {
                write!(w, ",{}", p - q)?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let hjb_cost = evaluate_cost(&sys, &hjb, cfg.lambda);
    let lqr_cost = evaluate_cost(&sys, &lqr, cfg.lambda);
    let entry = json!({
        "median": cmp.median,
        "max": cmp.max,
        "hjb_cost": hjb_cost,
        "lqr_cost": lqr_cost,
    });
    let summary_path = rc.out.join(art::LQR_SUMMARY);
    let mut summary: Value = art::read_json(&summary_path, "summary", "compare-lqr").unwrap_or_else(|_| json!({}));
    summary["care"] = json!({
        "residual": care.residual,
        "newton_steps": care.newton_steps,
        "gain": care.gain.as_slice(),
    });
    summary["ranks"][cfg.r.to_string()] = entry.clone();
    art::write_json(&summary_path, &summary)?;
    art::update_meta(&dir, "compare_lqr", cfg, entry)?;
    println!(
        "compare-lqr r = {}: relative control error median {:.4}, max {:.4}; cost {:.6} (LQR {:.6})",
        cfg.r, cmp.median, cmp.max, hjb_cost, lqr_cost
    );
    Ok(())
}

/// Ranks with a solve directory, ascending.
fn ranks(out: &Path) -> CliResult<Vec<usize>> {
    let entries = std::fs::read_dir(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut ranks: Vec<usize> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix('r')?.parse().ok())
        .collect();
    ranks.sort_unstable();
    Ok(ranks)
}

pub fn report(rc: &RunConfig) -> CliResult<()> {
    let root: Value = art::read_json(&rc.out.join(art::META), "run metadata", "snapshots")?;
    let mut per_rank = serde_json::Map::new();
    println!("run directory {}", rc.out.display());
    if let Some(b) = root.get("basis") {
        println!("  basis: {} modes, tau {}", b["modes"], b["tau"]);
    }
    println!("  {:>3} {:>8} {:>7} {:>11} {:>10} {:>12} {:>10} {:>10}", "r", "nodes", "sweeps", "residual", "violations", "cost", "err med", "err max");
    for r in ranks(&rc.out)? {
        let meta: Value = match art::read_json(&art::rank_dir(&rc.out, r).join(art::META), "metadata", "solve") {
            Ok(m) => m,
            Err(CliError::NotFound { .. }) => continue,
            Err(e) => return Err(e),
        };
        let solve = &meta["solve"];
        let sim = &meta["simulate"];
        let cmp = &meta["compare_lqr"];
        let float = |v: &Value, spec: fn(f64) -> String| v.as_f64().map_or("-".to_string(), spec);
        let int = |v: &Value| v.as_u64().map_or("-".to_string(), |x| x.to_string());
        println!(
            "  {:>3} {:>8} {:>7} {:>11} {:>10} {:>12} {:>10} {:>10}",
            r,
            int(&solve["nodes"]),
            int(&solve["iterations"]),
            float(&solve["final_residual"], |x| format!("{x:.3e}")),
            int(&solve["invariance"]["violations"]),
            float(&sim["cost"], |x| format!("{x:.6}")),
            float(&cmp["median"], |x| format!("{x:.4}")),
            float(&cmp["max"], |x| format!("{x:.4}")),
        );
        let mut entry = json!({});
        for key in ["solve", "simulate", "compare_lqr"] {
            if let Some(v) = meta.get(key) {
                let mut v = v.clone();
                if let Some(o) = v.as_object_mut() {
                    o.remove("config");
                    o.remove("generated_at");
                }
                entry[key] = v;
            }
        }
        per_rank.insert(r.to_string(), entry);
    }
    let mut basis = root.get("basis").cloned().unwrap_or(Value::Null);
    if let Some(o) = basis.as_object_mut() {
        o.remove("config");
        o.remove("generated_at");
    }
    let report = json!({
        "config": root.get("snapshots").and_then(|s| s.get("config")),
        "basis": basis,
        "ranks": per_rank,
    });
    art::write_json(&rc.out.join(art::REPORT), &report)
}
