//! CSV persistence of trajectories and event logs.
//!
//! Values are written with Rust's shortest round-trip float formatting, which
//! is lossless at full double precision, so downstream finite-difference
//! checks are not quantization-limited.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::DVector;

use hybrid_sens_core::formulations::{self, Formulation};
use hybrid_sens_core::integrator::TrajectoryArchive;
use hybrid_sens_core::model::{unpack_canonical, Model};

fn push_float(line: &mut String, x: f64) {
    if x == x.trunc() && x.abs() < 1e15 {
        // keep integral values compact and exact
        let _ = write!(line, ",{}", x);
    } else {
        let _ = write!(line, ",{:e}", x);
    }
}

/// One row per sample: `t, regime, q.., v.., z, vec(Q).., vec(V).., Z..`
/// plus the multiplier columns when requested.
pub fn write_trajectory_csv(
    path: &Path,
    archive: &TrajectoryArchive,
    model: &dyn Model,
    formulation: &Formulation,
    rho: &DVector<f64>,
    multipliers: bool,
) -> Result<usize> {
    let layout = archive.layout;
    let (n, p) = (layout.n, layout.p);

    let mut header = String::from("t,regime");
    for i in 0..n {
        let _ = write!(header, ",q{i}");
    }
    for i in 0..n {
        let _ = write!(header, ",v{i}");
    }
    header.push_str(",z");
    for j in 0..p {
        for i in 0..n {
            let _ = write!(header, ",dq{i}_drho{j}");
        }
    }
    for j in 0..p {
        for i in 0..n {
            let _ = write!(header, ",dv{i}_drho{j}");
        }
    }
    for j in 0..p {
        let _ = write!(header, ",dz_drho{j}");
    }
    let m_cols = if multipliers { model.dims().m } else { 0 };
    for i in 0..m_cols {
        let _ = write!(header, ",lambda{i}");
    }

    let mut text = header;
    text.push('\n');
    for (t, regime, y) in archive.all_samples() {
        let mut line = String::new();
        let _ = write!(line, "{t:e}");
        let _ = write!(line, ",{regime}");
        for &x in y.iter() {
            push_float(&mut line, x);
        }
        if multipliers {
            let (state, _) = unpack_canonical(y, layout, t, regime);
            let (_, lambda) =
                formulations::accel(model, formulation, t, &state.q, &state.v, rho, regime)
                    .context("multiplier recomputation for CSV output")?;
            for i in 0..m_cols {
                push_float(&mut line, lambda.get(i).copied().unwrap_or(0.0));
            }
        }
        line.push('\n');
        text.push_str(&line);
    }
    let rows = archive.all_samples().len();
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(rows)
}

/// One row per event: `t_eve, event_index, dt_drho.., v_pre.., v_post..`.
pub fn write_events_csv(path: &Path, archive: &TrajectoryArchive) -> Result<()> {
    let layout = archive.layout;
    let (n, p) = (layout.n, layout.p);
    let mut header = String::from("t_eve,event_index");
    for j in 0..p {
        let _ = write!(header, ",dt_drho{j}");
    }
    for i in 0..n {
        let _ = write!(header, ",v_pre{i}");
    }
    for i in 0..n {
        let _ = write!(header, ",v_post{i}");
    }
    let mut text = header;
    text.push('\n');
    for ev in &archive.events {
        let mut line = String::new();
        let _ = write!(line, "{:e}", ev.t_eve);
        let _ = write!(line, ",{}", ev.event_index);
        for j in 0..p {
            push_float(&mut line, ev.dt_drho[j]);
        }
        for i in 0..n {
            push_float(&mut line, ev.state_pre.v[i]);
        }
        for i in 0..n {
            push_float(&mut line, ev.state_post.v[i]);
        }
        line.push('\n');
        text.push_str(&line);
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
