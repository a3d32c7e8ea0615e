//! System description files: a TOML document declares either a raw DDAE
//! ([ddae] with its delay terms) or a plant/controller pair, plus analysis
//! options. Unknown keys are rejected and every number must be finite.

use nalgebra::DMatrix;
use serde::Deserialize;
use tds_hinf::{ControllerBlock, DdaeSystem, PlantBlock};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionFile {
    pub ddae: Option<DdaeDesc>,
    pub plant: Option<PlantDesc>,
    pub controller: Option<ControllerDesc>,
    #[serde(default)]
    pub options: OptionsDesc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdaeDesc {
    /// Leading matrix; identity when omitted.
    pub e: Option<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "term")]
    pub terms: Vec<TermDesc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDesc {
    pub delay: f64,
    pub a: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantDesc {
    pub a: Vec<Vec<f64>>,
    pub b_u: Vec<Vec<f64>>,
    pub b_w: Vec<Vec<f64>>,
    pub c_y: Vec<Vec<f64>>,
    pub c_z: Vec<Vec<f64>>,
    pub d_yu: Option<Vec<Vec<f64>>>,
    pub input_delays: Vec<f64>,
    pub output_delays: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDesc {
    #[serde(default)]
    pub order: usize,
    pub a_k: Option<Vec<Vec<f64>>>,
    pub b_k: Option<Vec<Vec<f64>>>,
    pub c_k: Option<Vec<Vec<f64>>>,
    pub d_k: Option<Vec<Vec<f64>>>,
    pub free_a: Option<Vec<Vec<bool>>>,
    pub free_b: Option<Vec<Vec<bool>>>,
    pub free_c: Option<Vec<Vec<bool>>>,
    pub free_d: Option<Vec<Vec<bool>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsDesc {
    /// Left edge of the root search window.
    pub min_real: Option<f64>,
    pub cluster_radius: Option<f64>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub max_iter: Option<usize>,
    pub feedback_delay: Option<f64>,
    pub grid_density: Option<usize>,
    pub rel_tol: Option<f64>,
}

pub fn parse(text: &str) -> Result<DescriptionFile, String> {
    let file: DescriptionFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.ddae.is_some() && file.plant.is_some() {
        return Err("description declares both [ddae] and [plant]; pick one".into());
    }
    if file.ddae.is_some() && file.controller.is_some() {
        return Err("[controller] requires a [plant] block to close the loop around".into());
    }
    Ok(file)
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(format!(
            "{name}: matrix must have at least one row and column"
        ));
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(format!(
                "{name}: row {i} has {} entries, expected {ncols}",
                row.len()
            ));
        }
        if let Some(x) = row.iter().find(|x| !x.is_finite()) {
            return Err(format!("{name}: non-finite entry {x} in row {i}"));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn mask(name: &str, rows: &[Vec<bool>], nr: usize, nc: usize) -> Result<DMatrix<bool>, String> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(format!("{name}: mask must be {nr} x {nc}"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn finite_list(name: &str, xs: &[f64]) -> Result<Vec<f64>, String> {
    if let Some(x) = xs.iter().find(|x| !x.is_finite()) {
        return Err(format!("{name}: non-finite entry {x}"));
    }
    Ok(xs.to_vec())
}

pub fn build_ddae(desc: &DdaeDesc) -> Result<DdaeSystem, String> {
    let b = matrix("ddae.b", &desc.b)?;
    let c = matrix("ddae.c", &desc.c)?;
    let n = b.nrows();
    let e = match &desc.e {
        Some(rows) => matrix("ddae.e", rows)?,
        None => DMatrix::identity(n, n),
    };
    if desc.terms.is_empty() {
        return Err("ddae: at least one [[ddae.term]] is required".into());
    }
    let mut terms = Vec::with_capacity(desc.terms.len());
    for (i, t) in desc.terms.iter().enumerate() {
        if !t.delay.is_finite() || t.delay < 0.0 {
            return Err(format!(
                "ddae.term {i}: delay {} must be finite and >= 0",
                t.delay
            ));
        }
        terms.push((t.delay, matrix(&format!("ddae.term {i}.a"), &t.a)?));
    }
    DdaeSystem::new(e, terms, b, c).map_err(|e| e.to_string())
}

pub fn build_plant(desc: &PlantDesc) -> Result<PlantBlock, String> {
    let a = matrix("plant.a", &desc.a)?;
    let b_u = matrix("plant.b_u", &desc.b_u)?;
    let b_w = matrix("plant.b_w", &desc.b_w)?;
    let c_y = matrix("plant.c_y", &desc.c_y)?;
    let c_z = matrix("plant.c_z", &desc.c_z)?;
    let d_yu = match &desc.d_yu {
        Some(rows) => matrix("plant.d_yu", rows)?,
        None => DMatrix::zeros(c_y.nrows(), b_u.ncols()),
    };
    PlantBlock::new(
        a,
        b_u,
        b_w,
        c_y,
        c_z,
        d_yu,
        finite_list("plant.input_delays", &desc.input_delays)?,
        finite_list("plant.output_delays", &desc.output_delays)?,
    )
    .map_err(|e| e.to_string())
}

/// Overlay the declared controller fields onto a zero controller of the
/// declared order. Dimensions come from the plant it will be wired to.
pub fn build_controller(
    desc: &ControllerDesc,
    n_u: usize,
    n_y: usize,
) -> Result<ControllerBlock, String> {
    let mut k = ControllerBlock::zero(desc.order, n_u, n_y);
    let nc = desc.order;
    let sized = |name: &str, rows: &[Vec<f64>], nr: usize, ncols: usize| {
        let m = matrix(name, rows)?;
        if m.nrows() != nr || m.ncols() != ncols {
            return Err(format!(
                "{name}: expected {nr} x {ncols}, got {} x {}",
                m.nrows(),
                m.ncols()
            ));
        }
        Ok(m)
    };
    // Unspecified blocks stay zero but free.
    if let Some(rows) = &desc.a_k {
        k.a_k = sized("controller.a_k", rows, nc, nc)?;
    }
    if let Some(rows) = &desc.b_k {
        k.b_k = sized("controller.b_k", rows, nc, n_y)?;
    }
    if let Some(rows) = &desc.c_k {
        k.c_k = sized("controller.c_k", rows, n_u, nc)?;
    }
    if let Some(rows) = &desc.d_k {
        k.d_k = sized("controller.d_k", rows, n_u, n_y)?;
    }
    if let Some(rows) = &desc.free_a {
        k.free_a = mask("controller.free_a", rows, nc, nc)?;
    }
    if let Some(rows) = &desc.free_b {
        k.free_b = mask("controller.free_b", rows, nc, n_y)?;
    }
    if let Some(rows) = &desc.free_c {
        k.free_c = mask("controller.free_c", rows, n_u, nc)?;
    }
    if let Some(rows) = &desc.free_d {
        k.free_d = mask("controller.free_d", rows, n_u, n_y)?;
    }
    Ok(k)
}

fn format_matrix(name: &str, m: &DMatrix<f64>, out: &mut String) {
    out.push_str(name);
    out.push_str(" = [");
    for i in 0..m.nrows() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for j in 0..m.ncols() {
            if j > 0 {
                out.push_str(", ");
            }
            out.push_str(&format!("{:.16e}", m[(i, j)]));
        }
        out.push(']');
    }
    out.push_str("]\n");
}

fn format_mask(name: &str, m: &DMatrix<bool>, out: &mut String) {
    if m.iter().all(|&f| f) {
        return;
    }
    out.push_str(name);
    out.push_str(" = [");
    for i in 0..m.nrows() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for j in 0..m.ncols() {
            if j > 0 {
                out.push_str(", ");
            }
            out.push_str(if m[(i, j)] { "true" } else { "false" });
        }
        out.push(']');
    }
    out.push_str("]\n");
}

/// Serialize a controller as a description-file fragment that reparses to
/// the same parameter vector bit for bit.
pub fn controller_fragment(k: &ControllerBlock) -> String {
    let mut out = String::from("[controller]\n");
    out.push_str(&format!("order = {}\n", k.order));
    if k.order > 0 {
        format_matrix("a_k", &k.a_k, &mut out);
        format_matrix("b_k", &k.b_k, &mut out);
        format_matrix("c_k", &k.c_k, &mut out);
    }
    format_matrix("d_k", &k.d_k, &mut out);
    if k.order > 0 {
        format_mask("free_a", &k.free_a, &mut out);
        format_mask("free_b", &k.free_b, &mut out);
        format_mask("free_c", &k.free_c, &mut out);
    }
    format_mask("free_d", &k.free_d, &mut out);
    out
}
