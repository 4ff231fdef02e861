//! Graph interaction multi-head self-attention.
//!
//! For each head, a semantic graph `SDIG = Q·Kᵀ / scale` is learned from the
//! two persons' token features, fused with the binary distance graph through
//! `R = softmax_rows(DSIG + α·SDIG)`, and used to aggregate the other
//! person's value features with a residual connection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Denominator of the semantic graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdigScale {
    /// `√d`, the per-head width.
    #[default]
    Head,
    /// `√D`, the full model width.
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GiMsaConfig {
    pub heads: usize,
    pub scale: SdigScale,
    pub temporal_context: bool,
    pub spatial_context: bool,
    /// When false the semantic graph is skipped and `R = softmax_rows(DSIG)`.
    pub use_sdig: bool,
}

impl GiMsaConfig {
    pub fn new(heads: usize) -> Self {
        Self {
            heads,
            scale: SdigScale::Head,
            temporal_context: true,
            spatial_context: true,
            use_sdig: true,
        }
    }

    pub fn head_width(&self, width: usize) -> Result<usize> {
        if self.heads == 0 || width % self.heads != 0 {
            return Err(Error::Config(format!("width {width} is not divisible by {} heads", self.heads)));
        }
        Ok(width / self.heads)
    }

    fn denominator(&self, width: usize) -> Result<f64> {
        let d = self.head_width(width)?;
        Ok(match self.scale {
            SdigScale::Head => (d as f64).sqrt(),
            SdigScale::Model => (width as f64).sqrt(),
        })
    }
}

/// Token grid of one person: `parts` tokens per step, `steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub parts: usize,
    pub steps: usize,
}

impl Layout {
    pub fn tokens(&self) -> usize {
        self.parts * self.steps
    }
}

/// Per-head weights, each `d×d`, plus the scalar `α`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub alpha: Var,
}

#[derive(Debug, Clone)]
pub struct GiMsaVars {
    pub heads: Vec<HeadVars>,
    /// `D×D` output projections.
    pub w_m: Var,
    pub w_n: Var,
}

/// Graphs produced by one head, both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub sdig_mn: Option<Tensor>,
    pub sdig_nm: Option<Tensor>,
    pub r_mn: Tensor,
    pub r_nm: Tensor,
}

/// Temporal and spatial context of time-major tokens `H: M×d`.
///
/// The temporal context of part `p` is the mean of its `L` tokens, the
/// spatial context of step `t` is the mean of its `B` tokens; each is
/// broadcast back to `M×d`.
pub fn contexts(tape: &mut Tape, h: Var, layout: Layout) -> Result<(Var, Var)> {
    let (m, d) = match tape.shape(h) {
        &[m, d] => (m, d),
        s => return Err(Error::Config(format!("context input must be a matrix, got {s:?}"))),
    };
    if m != layout.tokens() {
        return Err(Error::Config(format!(
            "{m} tokens do not match {} parts × {} steps",
            layout.parts, layout.steps
        )));
    }
    let grid = tape.reshape(h, &[layout.steps, layout.parts, d])?;
    let tc = tape.mean_axis(grid, 0)?;
    let tc = tape.repeat_axis(tc, 0, layout.steps)?;
    let tc = tape.reshape(tc, &[m, d])?;
    let sc = tape.mean_axis(grid, 1)?;
    let sc = tape.repeat_axis(sc, 1, layout.parts)?;
    let sc = tape.reshape(sc, &[m, d])?;
    Ok((tc, sc))
}

/// `(H_me·W_Q)·((H_ne + tc + sc)·W_K)ᵀ / denominator`.
pub fn sdig(
    tape: &mut Tape,
    h_me: Var,
    h_ne: Var,
    w_q: Var,
    w_k: Var,
    layout: Layout,
    cfg: &GiMsaConfig,
    denominator: f64,
) -> Result<Var> {
    let q = tape.matmul(h_me, w_q)?;
    let mut key_in = h_ne;
    if cfg.temporal_context || cfg.spatial_context {
        let (tc, sc) = contexts(tape, h_ne, layout)?;
        if cfg.temporal_context {
            key_in = tape.add(key_in, tc)?;
        }
        if cfg.spatial_context {
            key_in = tape.add(key_in, sc)?;
        }
    }
    let k = tape.matmul(key_in, w_k)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    Ok(tape.scale(scores, 1.0 / denominator)?)
}

/// `softmax_rows(DSIG + α·SDIG)`; a missing semantic graph contributes nothing.
pub fn fuse_graphs(tape: &mut Tape, dsig: Var, sdig: Option<Var>, alpha: Var) -> Result<Var> {
    let logits = match sdig {
        Some(s) => {
            let weighted = tape.scale_by(s, alpha)?;
            tape.add(dsig, weighted)?
        }
        None => dsig,
    };
    Ok(tape.softmax_rows(logits)?)
}

/// One direction of one head: `R·(H_ne·W_V) + H_me`.
fn attend(
    tape: &mut Tape,
    h_me: Var,
    h_ne: Var,
    dsig: Var,
    head: &HeadVars,
    layout: Layout,
    cfg: &GiMsaConfig,
    denominator: f64,
) -> Result<(Var, Option<Var>, Var)> {
    let semantic = if cfg.use_sdig {
        Some(sdig(tape, h_me, h_ne, head.w_q, head.w_k, layout, cfg, denominator)?)
    } else {
        None
    };
    let r = fuse_graphs(tape, dsig, semantic, head.alpha)?;
    let values = tape.matmul(h_ne, head.w_v)?;
    let mixed = tape.matmul(r, values)?;
    Ok((tape.add(mixed, h_me)?, semantic, r))
}

/// Single-head interaction for both persons. Returns `(Ĥ_me, Ĥ_ne)`.
#[allow(clippy::too_many_arguments)]
pub fn gi_sa(
    tape: &mut Tape,
    h_me: Var,
    h_ne: Var,
    dsig_mn: Var,
    dsig_nm: Var,
    head: &HeadVars,
    layout: Layout,
    cfg: &GiMsaConfig,
    denominator: f64,
    trace: Option<&mut Vec<HeadTrace>>,
) -> Result<(Var, Var)> {
    let m = layout.tokens();
    for g in [dsig_mn, dsig_nm] {
        if tape.shape(g) != [m, m] {
            return Err(Error::Config(format!(
                "interaction graph {:?} does not match {m} tokens",
                tape.shape(g)
            )));
        }
    }
    let (out_m, s_mn, r_mn) = attend(tape, h_me, h_ne, dsig_mn, head, layout, cfg, denominator)?;
    let (out_n, s_nm, r_nm) = attend(tape, h_ne, h_me, dsig_nm, head, layout, cfg, denominator)?;
    if let Some(trace) = trace {
        trace.push(HeadTrace {
            sdig_mn: s_mn.map(|v| tape.value(v).clone()),
            sdig_nm: s_nm.map(|v| tape.value(v).clone()),
            r_mn: tape.value(r_mn).clone(),
            r_nm: tape.value(r_nm).clone(),
        });
    }
    Ok((out_m, out_n))
}

/// Splits `M×D` features into `h` channel chunks, runs [`gi_sa`] per head,
/// concatenates and applies the per-person output projections.
#[allow(clippy::too_many_arguments)]
pub fn gi_msa(
    tape: &mut Tape,
    h_me: Var,
    h_ne: Var,
    dsig_mn: Var,
    dsig_nm: Var,
    vars: &GiMsaVars,
    layout: Layout,
    cfg: &GiMsaConfig,
    mut trace: Option<&mut Vec<HeadTrace>>,
) -> Result<(Var, Var)> {
    let width = tape.shape(h_me)[1];
    let d = cfg.head_width(width)?;
    let denominator = cfg.denominator(width)?;
    if vars.heads.len() != cfg.heads {
        return Err(Error::Config(format!("{} head weight sets for {} heads", vars.heads.len(), cfg.heads)));
    }
    let mut outs_m = Vec::with_capacity(cfg.heads);
    let mut outs_n = Vec::with_capacity(cfg.heads);
    for (i, head) in vars.heads.iter().enumerate() {
        let hm = tape.narrow_cols(h_me, i * d, d)?;
        let hn = tape.narrow_cols(h_ne, i * d, d)?;
        let (om, on) = gi_sa(tape, hm, hn, dsig_mn, dsig_nm, head, layout, cfg, denominator, trace.as_deref_mut())?;
        outs_m.push(om);
        outs_n.push(on);
    }
    let cat_m = tape.concat_last(&outs_m)?;
    let cat_n = tape.concat_last(&outs_n)?;
    Ok((tape.matmul(cat_m, vars.w_m)?, tape.matmul(cat_n, vars.w_n)?))
}

/// Text matrix dump: a `rows cols` header line, then one line of
/// space-separated decimals per row.
pub fn format_matrix(t: &Tensor) -> String {
    let (rows, cols) = t.rows_cols();
    let mut out = format!("{rows} {cols}\n");
    for r in 0..rows {
        let line: Vec<String> = t.row(r).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Tensor> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty matrix dump"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::parse(1, format!("bad dimension `{s}`"))))
        .collect::<Result<_>>()?;
    let &[rows, cols] = dims.as_slice() else {
        return Err(Error::parse(1, "header must be `rows cols`"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut count = 0;
    for (i, line) in lines {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::parse(i + 1, format!("bad value `{s}`"))))
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(Error::parse(i + 1, format!("{} values, expected {cols}", row.len())));
        }
        data.extend(row);
        count += 1;
    }
    if count != rows {
        return Err(Error::parse(count + 2, format!("{count} rows, expected {rows}")));
    }
    Ok(Tensor::new(vec![rows, cols], data)?)
}
