//! Data-driven representation of an unknown LTI plant.
//!
//! Each output channel `i` is modelled as a multi-input single-output system
//! over the non-minimal state
//!
//! ```text
//! χ̄_i(t) = col(y_i(t−n̄), …, y_i(t−1), u(t−n̄), …, u(t−1)) ∈ ℝ^{(1+m)n̄}
//! ```
//!
//! and identified from one pre-experiment as
//!
//! ```text
//! [A_d,i  B_d,i] = X̄_{i,+} · pinv(col(X̄_{i,−}, U₋))
//! ```
//!
//! The per-episode pairs are averaged over episodes. Channel blocks are then
//! stacked into a block-diagonal `Ā_d` and a vertically stacked `B̄_d` (every
//! channel is driven by the same input) to build the horizon predictor.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite_vec, pinv_with_report, Matrix, Vector};
use crate::plant::EpisodeData;

/// Dimension of one channel's χ̄ for `m` inputs and order bound `nbar`.
pub fn chi_dim(m: usize, nbar: usize) -> usize {
    (1 + m) * nbar
}

/// One channel's non-minimal state, ordered
/// `col(y_i(t−n̄), …, y_i(t−1), u(t−n̄), …, u(t−1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiVector(Vector);

impl ChiVector {
    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Assembles χ̄ from the last `nbar` channel outputs and the last `nbar`
/// inputs, oldest first.
pub fn build_chi(y_history: &[f64], u_history: &[Vector], nbar: usize) -> Result<ChiVector> {
    if nbar == 0 {
        return Err(Error::invalid("nbar must be at least 1"));
    }
    if y_history.len() != nbar || u_history.len() != nbar {
        return Err(Error::invalid(format!(
            "expected {nbar} output and input samples, got {} and {}",
            y_history.len(),
            u_history.len()
        )));
    }
    let m = u_history[0].len();
    if m == 0 || u_history.iter().any(|u| u.len() != m) {
        return Err(Error::invalid("input history has inconsistent dimensions"));
    }
    let mut chi = Vector::zeros(chi_dim(m, nbar));
    for (k, &y) in y_history.iter().enumerate() {
        chi[k] = y;
    }
    for (k, u) in u_history.iter().enumerate() {
        chi.rows_mut(nbar + k * m, m).copy_from(u);
    }
    Ok(ChiVector(chi))
}

/// Fills `dst` with χ̄ for channel `channel` whose newest sample is column
/// `end − 1` of the signals.
fn fill_chi(dst: &mut [f64], outputs: &Matrix, inputs: &Matrix, channel: usize, end: usize, nbar: usize) {
    let m = inputs.nrows();
    let start = end - nbar;
    for k in 0..nbar {
        dst[k] = outputs[(channel, start + k)];
        for j in 0..m {
            dst[nbar + k * m + j] = inputs[(j, start + k)];
        }
    }
}

/// Data matrices of one channel of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    /// `[χ̄_d(0) … χ̄_d(T−1)]`
    pub x_minus: Matrix,
    /// `[χ̄_d(1) … χ̄_d(T)]`
    pub x_plus: Matrix,
    /// `[u_d(0) … u_d(T−1)]`
    pub u_minus: Matrix,
    pub channel: usize,
    pub nbar: usize,
    pub t_len: usize,
}

impl DataMatrices {
    /// `col(X̄₋, U₋)`.
    pub fn stacked(&self) -> Matrix {
        let (rx, t) = self.x_minus.shape();
        let m = self.u_minus.nrows();
        let mut j = Matrix::zeros(rx + m, t);
        j.rows_mut(0, rx).copy_from(&self.x_minus);
        j.rows_mut(rx, m).copy_from(&self.u_minus);
        j
    }
}

/// Builds `X̄_{i,−}`, `X̄_{i,+}` and `U₋` from an episode. Episode time 0 is
/// sample `initial_offset`; χ̄_d(0) reaches back into the offset window.
pub fn build_data_matrices(episode: &EpisodeData, channel: usize, nbar: usize) -> Result<DataMatrices> {
    if nbar == 0 {
        return Err(Error::invalid("nbar must be at least 1"));
    }
    if channel >= episode.p() {
        return Err(Error::invalid(format!(
            "channel {channel} out of range for {} outputs",
            episode.p()
        )));
    }
    let offset = episode.initial_offset;
    if offset < nbar {
        return Err(Error::InsufficientData(format!(
            "episode history window of {offset} samples is shorter than nbar = {nbar}"
        )));
    }
    if episode.len() < offset + 1 {
        return Err(Error::InsufficientData("episode has no samples after its history window".into()));
    }
    let t_len = episode.len() - offset;
    let m = episode.m();
    let d = chi_dim(m, nbar);

    // Column k holds χ̄_d(k), k = 0..=T.
    let mut chis = Matrix::zeros(d, t_len + 1);
    for k in 0..=t_len {
        fill_chi(
            chis.column_mut(k).as_mut_slice(),
            &episode.outputs,
            &episode.inputs,
            channel,
            offset + k,
            nbar,
        );
    }
    Ok(DataMatrices {
        x_minus: chis.columns(0, t_len).into_owned(),
        x_plus: chis.columns(1, t_len).into_owned(),
        u_minus: episode.inputs.columns(offset, t_len).into_owned(),
        channel,
        nbar,
        t_len,
    })
}

/// Identified `(A_d,i, B_d,i)` of one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub a: Matrix,
    pub b: Matrix,
}

/// Per-channel data-driven model, possibly averaged over several episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDrivenModel {
    channels: Vec<ChannelModel>,
    nbar: usize,
    m: usize,
    episodes_averaged: usize,
}

impl DataDrivenModel {
    pub fn new(channels: Vec<ChannelModel>, nbar: usize, m: usize, episodes_averaged: usize) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("model needs at least one channel"));
        }
        if nbar == 0 || m == 0 {
            return Err(Error::invalid("nbar and m must be positive"));
        }
        if episodes_averaged == 0 {
            return Err(Error::invalid("episodes_averaged must be at least 1"));
        }
        let d = chi_dim(m, nbar);
        for (i, ch) in channels.iter().enumerate() {
            if ch.a.shape() != (d, d) || ch.b.shape() != (d, m) {
                return Err(Error::invalid(format!(
                    "channel {i} has shapes {:?}/{:?}, expected ({d}, {d})/({d}, {m})",
                    ch.a.shape(),
                    ch.b.shape()
                )));
            }
        }
        Ok(DataDrivenModel {
            channels,
            nbar,
            m,
            episodes_averaged,
        })
    }

    pub fn channels(&self) -> &[ChannelModel] {
        &self.channels
    }

    pub fn nbar(&self) -> usize {
        self.nbar
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.channels.len()
    }

    pub fn episodes_averaged(&self) -> usize {
        self.episodes_averaged
    }

    /// Size of one channel block, `(1 + m) n̄`.
    pub fn block_dim(&self) -> usize {
        chi_dim(self.m, self.nbar)
    }

    /// Size of the stacked χ̄ over all channels.
    pub fn state_dim(&self) -> usize {
        self.p() * self.block_dim()
    }

    /// `Ā_d = blockdiag(A_d,1, …, A_d,p)`.
    pub fn a_block_diag(&self) -> Matrix {
        let d = self.block_dim();
        let mut a = Matrix::zeros(self.state_dim(), self.state_dim());
        for (i, ch) in self.channels.iter().enumerate() {
            a.view_mut((i * d, i * d), (d, d)).copy_from(&ch.a);
        }
        a
    }

    /// `B̄_d = col(B_d,1, …, B_d,p)`.
    pub fn b_stack(&self) -> Matrix {
        let d = self.block_dim();
        let mut b = Matrix::zeros(self.state_dim(), self.m);
        for (i, ch) in self.channels.iter().enumerate() {
            b.view_mut((i * d, 0), (d, self.m)).copy_from(&ch.b);
        }
        b
    }

    /// Stacked χ̄ from the last `n̄` outputs (`p × n̄`) and inputs (`m × n̄`),
    /// oldest sample first.
    pub fn stacked_chi(&self, y_history: &Matrix, u_history: &Matrix) -> Result<Vector> {
        if y_history.shape() != (self.p(), self.nbar) || u_history.shape() != (self.m, self.nbar) {
            return Err(Error::invalid(format!(
                "history shapes {:?}/{:?} do not match p={}, m={}, nbar={}",
                y_history.shape(),
                u_history.shape(),
                self.p(),
                self.m,
                self.nbar
            )));
        }
        let d = self.block_dim();
        let mut chi = Vector::zeros(self.state_dim());
        for i in 0..self.p() {
            fill_chi(
                &mut chi.as_mut_slice()[i * d..(i + 1) * d],
                y_history,
                u_history,
                i,
                self.nbar,
                self.nbar,
            );
        }
        Ok(chi)
    }

    /// Reads `y(t)` off a stacked `χ̄(t+1)`: entry `n̄` of every channel block.
    pub fn output_of(&self, chi_next: &Vector) -> Vector {
        let d = self.block_dim();
        Vector::from_fn(self.p(), |i, _| chi_next[i * d + self.nbar - 1])
    }

    /// Writes the model as comma-separated text: a header of dimensions
    /// followed by one `A` and one `B` block per channel.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# d2pc data-driven model")?;
        writeln!(w, "nbar,{}", self.nbar)?;
        writeln!(w, "inputs,{}", self.m)?;
        writeln!(w, "outputs,{}", self.p())?;
        writeln!(w, "episodes,{}", self.episodes_averaged)?;
        for (i, ch) in self.channels.iter().enumerate() {
            write_block(&mut w, "A", i, &ch.a)?;
            write_block(&mut w, "B", i, &ch.b)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('#')));

        let mut header = |key: &str| -> Result<usize> {
            let (ln, line) = lines.next().ok_or_else(|| Error::parse(0, format!("missing {key}")))?;
            let line = line?;
            let (k, v) = line
                .trim()
                .split_once(',')
                .ok_or_else(|| Error::parse(ln, "expected key,value"))?;
            if k != key {
                return Err(Error::parse(ln, format!("expected {key}, found {k}")));
            }
            v.trim().parse().map_err(|_| Error::parse(ln, format!("bad value for {key}")))
        };
        let nbar = header("nbar")?;
        let m = header("inputs")?;
        let p = header("outputs")?;
        let episodes = header("episodes")?;

        let mut channels = Vec::with_capacity(p);
        for i in 0..p {
            let a = read_block(&mut lines, "A", i)?;
            let b = read_block(&mut lines, "B", i)?;
            channels.push(ChannelModel { a, b });
        }
        DataDrivenModel::new(channels, nbar, m, episodes)
    }
}

fn write_block<W: Write>(w: &mut W, name: &str, channel: usize, m: &Matrix) -> Result<()> {
    writeln!(w, "{name},{channel},{},{}", m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn read_block<I>(lines: &mut I, name: &str, channel: usize) -> Result<Matrix>
where
    I: Iterator<Item = (usize, std::io::Result<String>)>,
{
    let (ln, line) = lines
        .next()
        .ok_or_else(|| Error::parse(0, format!("missing block {name} {channel}")))?;
    let line = line?;
    let fields: Vec<&str> = line.trim().split(',').collect();
    let parse_usize = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::parse(ln, "bad block header"));
    if fields.len() != 4 || fields[0] != name || parse_usize(fields[1])? != channel {
        return Err(Error::parse(ln, format!("expected header {name},{channel},rows,cols")));
    }
    let rows = parse_usize(fields[2])?;
    let cols = parse_usize(fields[3])?;
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::parse(ln, "block ended early"))?;
        let line = line?;
        let vals: Vec<&str> = line.trim().split(',').collect();
        if vals.len() != cols {
            return Err(Error::parse(ln, format!("expected {cols} values")));
        }
        for (c, v) in vals.iter().enumerate() {
            out[(r, c)] = v.trim().parse().map_err(|_| Error::parse(ln, format!("bad number {v:?}")))?;
        }
    }
    Ok(out)
}

/// Identifies every channel from a single episode. Also returns, per
/// channel, whether `col(X̄₋, U₋)` had full numeric row rank.
pub fn identify_episode(
    episode: &EpisodeData,
    nbar: usize,
    pinv_tol: f64,
) -> Result<(Vec<ChannelModel>, Vec<bool>)> {
    let m = episode.m();
    let d = chi_dim(m, nbar);
    let mut models = Vec::with_capacity(episode.p());
    let mut full_rank = Vec::with_capacity(episode.p());
    for channel in 0..episode.p() {
        let dm = build_data_matrices(episode, channel, nbar)?;
        let j = dm.stacked();
        let (j_pinv, report) = pinv_with_report(&j, pinv_tol)?;
        full_rank.push(report.numeric_rank == j.nrows());
        let ab = &dm.x_plus * j_pinv;
        models.push(ChannelModel {
            a: ab.columns(0, d).into_owned(),
            b: ab.columns(d, m).into_owned(),
        });
    }
    Ok((models, full_rank))
}

/// Identifies a model from each episode and averages the per-channel
/// `(A_d,i, B_d,i)` entrywise with equal weights.
pub fn identify(episodes: &[EpisodeData], nbar: usize, pinv_tol: f64) -> Result<DataDrivenModel> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::invalid("identification needs at least one episode"))?;
    let (m, p) = (first.m(), first.p());
    if episodes.iter().any(|e| e.m() != m || e.p() != p) {
        return Err(Error::invalid("episodes have inconsistent dimensions"));
    }
    for e in episodes {
        let t = e.len().saturating_sub(e.initial_offset);
        if t < 4 * nbar + 1 {
            log::warn!("episode data length {t} is below 4·nbar + 1 = {}", 4 * nbar + 1);
        }
    }

    let per_episode: Vec<(Vec<ChannelModel>, Vec<bool>)> = episodes
        .par_iter()
        .map(|e| identify_episode(e, nbar, pinv_tol))
        .collect::<Result<_>>()?;

    let deficient = per_episode
        .iter()
        .flat_map(|(_, fr)| fr.iter())
        .filter(|&&full| !full)
        .count();
    if deficient > 0 {
        log::warn!(
            "{deficient} channel data matrices lack full row rank (expected when nbar exceeds the plant order)"
        );
    }

    let d = chi_dim(m, nbar);
    let scale = 1.0 / episodes.len() as f64;
    let mut channels: Vec<ChannelModel> = (0..p)
        .map(|_| ChannelModel {
            a: Matrix::zeros(d, d),
            b: Matrix::zeros(d, m),
        })
        .collect();
    // Summed in episode order so results do not depend on thread scheduling.
    for (models, _) in &per_episode {
        for (acc, ch) in channels.iter_mut().zip(models) {
            acc.a += &ch.a;
            acc.b += &ch.b;
        }
    }
    for ch in &mut channels {
        ch.a *= scale;
        ch.b *= scale;
    }
    DataDrivenModel::new(channels, nbar, m, episodes.len())
}

/// One step of the identified representation, channel by channel:
/// `χ̄_i(t+1) = A_d,i χ̄_i(t) + B_d,i u(t)`.
pub fn propagate(model: &DataDrivenModel, chi: &Vector, u: &Vector) -> Result<Vector> {
    if chi.len() != model.state_dim() || u.len() != model.m() {
        return Err(Error::invalid(format!(
            "expected chi of length {} and u of length {}, got {} and {}",
            model.state_dim(),
            model.m(),
            chi.len(),
            u.len()
        )));
    }
    ensure_finite_vec(chi, "chi")?;
    ensure_finite_vec(u, "u")?;
    let d = model.block_dim();
    let mut next = Vector::zeros(chi.len());
    for (i, ch) in model.channels().iter().enumerate() {
        let block = &ch.a * chi.rows(i * d, d) + &ch.b * u;
        next.rows_mut(i * d, d).copy_from(&block);
    }
    Ok(next)
}

/// Horizon predictor
/// `col(χ̄(t+1), …, χ̄(t+N)) = F χ̄(t) + G col(u(t), …, u(t+N−1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub f: Matrix,
    pub g: Matrix,
    /// Picks `y(t+k)` (entry `n̄` of each channel block of `χ̄(t+k+1)`) out
    /// of the stacked predicted states.
    pub output_selector: Matrix,
    pub horizon: usize,
    phi: Matrix,
    gamma: Matrix,
    p: usize,
    m: usize,
}

impl Predictor {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn state_dim(&self) -> usize {
        self.f.ncols()
    }

    /// `selector · F`: maps χ̄(t) to the free output response.
    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    /// `selector · G`: maps the input sequence to the forced output response.
    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn predict_states(&self, chi: &Vector, inputs: &Vector) -> Vector {
        &self.f * chi + &self.g * inputs
    }

    /// `col(y(t), …, y(t+N−1))`.
    pub fn predict_outputs(&self, chi: &Vector, inputs: &Vector) -> Vector {
        &self.phi * chi + &self.gamma * inputs
    }
}

/// Builds `F`, `G` and the output selector for horizon `horizon`.
pub fn build_predictor(model: &DataDrivenModel, horizon: usize) -> Result<Predictor> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let (p, m, nbar) = (model.p(), model.m(), model.nbar());
    let d = model.block_dim();
    let s = model.state_dim();

    // powers[i][k] = A_d,i^k for k = 0..=N; forced[i][k] = A_d,i^k B_d,i.
    let mut powers: Vec<Vec<Matrix>> = Vec::with_capacity(p);
    let mut forced: Vec<Vec<Matrix>> = Vec::with_capacity(p);
    for ch in model.channels() {
        let mut pw = Vec::with_capacity(horizon + 1);
        pw.push(Matrix::identity(d, d));
        for k in 1..=horizon {
            let next = &ch.a * &pw[k - 1];
            pw.push(next);
        }
        forced.push(pw[..horizon].iter().map(|ak| ak * &ch.b).collect());
        powers.push(pw);
    }

    let mut f = Matrix::zeros(s * horizon, s);
    let mut g = Matrix::zeros(s * horizon, m * horizon);
    for j in 0..horizon {
        for i in 0..p {
            f.view_mut((j * s + i * d, i * d), (d, d))
                .copy_from(&powers[i][j + 1]);
            for k in 0..=j {
                g.view_mut((j * s + i * d, k * m), (d, m))
                    .copy_from(&forced[i][j - k]);
            }
        }
    }

    let mut selector = Matrix::zeros(p * horizon, s * horizon);
    let mut phi = Matrix::zeros(p * horizon, s);
    let mut gamma = Matrix::zeros(p * horizon, m * horizon);
    for j in 0..horizon {
        for i in 0..p {
            let row = j * p + i;
            let col = j * s + i * d + nbar - 1;
            selector[(row, col)] = 1.0;
            phi.row_mut(row).copy_from(&f.row(col));
            gamma.row_mut(row).copy_from(&g.row(col));
        }
    }

    Ok(Predictor {
        f,
        g,
        output_selector: selector,
        horizon,
        phi,
        gamma,
        p,
        m,
    })
}
