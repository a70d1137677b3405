//! Pairwise MRF over the 4-connected pixel grid and its minimization by
//! min-sum belief propagation.
//!
//! Energy of a labeling `y`:
//!
//! ```text
//! E(y) = sum_i unary[i][y_i] + sum_{undirected edges (i,j)} alpha_s * a_ij * d(y_i, y_j)
//! ```
//!
//! with `a_ij = exp(-|v_i - v_j|^2 / (2 sigma))` computed from Pauli
//! amplitudes and `d` either the Potts indicator or `|y_i - y_j|`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::{ProbabilityField, PROB_FLOOR};
use crate::coherency::PauliField;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, UNLABELED};

/// Largest labeling space [`exhaustive_map`] will enumerate.
pub const EXHAUSTIVE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// `1[y_i != y_j]`
    #[default]
    Potts,
    /// `|y_i - y_j|` on the class ids.
    LinearLabel,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Potts => "potts",
            Kernel::LinearLabel => "linear-label",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "potts" => Ok(Kernel::Potts),
            "linear-label" | "linear" => Ok(Kernel::LinearLabel),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Affinity bandwidth. `flat` is set when the image has no variation and
/// the fallback value 1 is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sigma {
    pub value: f64,
    pub flat: bool,
}

/// Mean squared Pauli distance over all 4-neighbor pairs.
pub fn compute_sigma(pauli: &PauliField) -> Sigma {
    let (h, w) = (pauli.height(), pauli.width());
    let mut sum = 0.0;
    let mut edges = 0usize;
    for r in 0..h {
        for c in 0..w {
            let v = pauli.get(r, c);
            if c + 1 < w {
                sum += dist2(v, pauli.get(r, c + 1));
                edges += 1;
            }
            if r + 1 < h {
                sum += dist2(v, pauli.get(r + 1, c));
                edges += 1;
            }
        }
    }
    let mean = if edges > 0 { sum / edges as f64 } else { 0.0 };
    if mean > 0.0 && mean.is_finite() {
        Sigma {
            value: mean,
            flat: false,
        }
    } else {
        Sigma {
            value: 1.0,
            flat: true,
        }
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Edge cost between 1-based classes `yi` and `yj`.
pub fn pairwise_cost(yi: usize, yj: usize, affinity: f64, alpha_s: f64, kernel: Kernel) -> f64 {
    let distance = match kernel {
        Kernel::Potts => {
            if yi == yj {
                return 0.0;
            }
            1.0
        }
        Kernel::LinearLabel => yi.abs_diff(yj) as f64,
    };
    alpha_s * affinity * distance
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrfProblem {
    height: usize,
    width: usize,
    num_classes: usize,
    /// `unary[i * K + k]`: cost of class `k + 1` at pixel `i`, in nats.
    unary: Vec<f64>,
    /// Edge (r, c)-(r, c+1) at `r * (W - 1) + c`.
    horizontal: Vec<f64>,
    /// Edge (r, c)-(r+1, c) at `r * W + c`.
    vertical: Vec<f64>,
    pub alpha_s: f64,
    pub kernel: Kernel,
    pub sigma: f64,
}

impl MrfProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        unary: Vec<f64>,
        horizontal: Vec<f64>,
        vertical: Vec<f64>,
        alpha_s: f64,
        kernel: Kernel,
        sigma: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 || num_classes == 0 {
            return Err(Error::invalid("empty MRF problem"));
        }
        if num_classes > u8::MAX as usize {
            return Err(Error::invalid("too many classes"));
        }
        if unary.len() != height * width * num_classes {
            return Err(Error::invalid("unary buffer does not match shape"));
        }
        if horizontal.len() != height * (width - 1) || vertical.len() != (height - 1) * width {
            return Err(Error::invalid("affinity buffers do not match shape"));
        }
        if unary.iter().any(|u| !u.is_finite()) {
            return Err(Error::invariant("unary costs must be finite"));
        }
        if horizontal
            .iter()
            .chain(&vertical)
            .any(|&a| !(a > 0.0 && a <= 1.0))
        {
            return Err(Error::invariant("affinities must lie in (0, 1]"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invariant("sigma must be positive"));
        }
        if !(alpha_s >= 0.0 && alpha_s.is_finite()) {
            return Err(Error::invalid("alpha_s must be a non-negative number"));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            unary,
            horizontal,
            vertical,
            alpha_s,
            kernel,
            sigma,
        })
    }

    /// Unary costs `-ln P` and Pauli-driven affinities. Returns the problem
    /// and the bandwidth that was used.
    pub fn from_probabilities(
        probs: &ProbabilityField,
        pauli: &PauliField,
        alpha_s: f64,
        kernel: Kernel,
    ) -> Result<(Self, Sigma)> {
        let (h, w) = (probs.height(), probs.width());
        if pauli.height() != h || pauli.width() != w {
            return Err(Error::invalid(
                "pauli field and probability field differ in size",
            ));
        }
        let sigma = compute_sigma(pauli);
        let affinity = |a: [f64; 3], b: [f64; 3]| {
            (-dist2(a, b) / (2.0 * sigma.value))
                .exp()
                .max(f64::MIN_POSITIVE)
        };
        let unary = probs
            .as_slice()
            .iter()
            .map(|p| -p.max(PROB_FLOOR).ln())
            .collect();
        let mut horizontal = Vec::with_capacity(h * (w - 1));
        for r in 0..h {
            for c in 0..w - 1 {
                horizontal.push(affinity(pauli.get(r, c), pauli.get(r, c + 1)));
            }
        }
        let mut vertical = Vec::with_capacity((h - 1) * w);
        for r in 0..h - 1 {
            for c in 0..w {
                vertical.push(affinity(pauli.get(r, c), pauli.get(r + 1, c)));
            }
        }
        let problem = Self::new(
            h,
            w,
            probs.num_classes(),
            unary,
            horizontal,
            vertical,
            alpha_s,
            kernel,
            sigma.value,
        )?;
        Ok((problem, sigma))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn alpha_s(&self) -> f64 {
        self.alpha_s
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn unary(&self, pixel: usize) -> &[f64] {
        &self.unary[pixel * self.num_classes..(pixel + 1) * self.num_classes]
    }

    pub fn horizontal_affinity(&self, row: usize, col: usize) -> f64 {
        self.horizontal[row * (self.width - 1) + col]
    }

    pub fn vertical_affinity(&self, row: usize, col: usize) -> f64 {
        self.vertical[row * self.width + col]
    }

    /// Same problem with a different smoothness factor.
    pub fn with_alpha(&self, alpha_s: f64) -> Self {
        Self {
            alpha_s,
            ..self.clone()
        }
    }

    /// Swap rows and columns, carrying every per-pixel and per-edge input.
    pub fn transposed(&self) -> Self {
        let (h, w, k) = (self.height, self.width, self.num_classes);
        let mut unary = vec![0.0; self.unary.len()];
        for r in 0..h {
            for c in 0..w {
                let (src, dst) = ((r * w + c) * k, (c * h + r) * k);
                unary[dst..dst + k].copy_from_slice(&self.unary[src..src + k]);
            }
        }
        let mut vertical = vec![0.0; self.horizontal.len()];
        for r in 0..h {
            for c in 0..w - 1 {
                vertical[c * h + r] = self.horizontal[r * (w - 1) + c];
            }
        }
        let mut horizontal = vec![0.0; self.vertical.len()];
        for r in 0..h - 1 {
            for c in 0..w {
                horizontal[c * (h - 1) + r] = self.vertical[r * w + c];
            }
        }
        Self {
            height: w,
            width: h,
            num_classes: k,
            unary,
            horizontal,
            vertical,
            alpha_s: self.alpha_s,
            kernel: self.kernel,
            sigma: self.sigma,
        }
    }

    /// Energy of a 0-based labeling.
    fn energy_of(&self, labels: &[usize]) -> f64 {
        let (h, w, k) = (self.height, self.width, self.num_classes);
        let mut e = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            e += self.unary[i * k + y];
        }
        for r in 0..h {
            for c in 0..w - 1 {
                let (a, b) = (labels[r * w + c], labels[r * w + c + 1]);
                e += pairwise_cost(
                    a + 1,
                    b + 1,
                    self.horizontal_affinity(r, c),
                    self.alpha_s,
                    self.kernel,
                );
            }
        }
        for r in 0..h - 1 {
            for c in 0..w {
                let (a, b) = (labels[r * w + c], labels[(r + 1) * w + c]);
                e += pairwise_cost(
                    a + 1,
                    b + 1,
                    self.vertical_affinity(r, c),
                    self.alpha_s,
                    self.kernel,
                );
            }
        }
        e
    }

    fn check_labels(&self, labels: &LabelMap) -> Result<Vec<usize>> {
        if labels.height() != self.height || labels.width() != self.width {
            return Err(Error::invalid("label map does not match MRF size"));
        }
        labels
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                if l == UNLABELED {
                    Err(Error::invalid(format!("pixel {i} is unlabeled")))
                } else if l as usize > self.num_classes {
                    Err(Error::invalid(format!("label {l} exceeds class count")))
                } else {
                    Ok(l as usize - 1)
                }
            })
            .collect()
    }

    fn to_label_map(&self, labels: &[usize]) -> LabelMap {
        LabelMap::new(
            self.height,
            self.width,
            self.num_classes as u8,
            labels.iter().map(|&y| (y + 1) as u8).collect(),
        )
        .expect("labels are within class range")
    }

    /// Per-pixel minimum-unary labeling, ties to the smaller class.
    pub fn unary_argmin(&self) -> LabelMap {
        let labels: Vec<usize> = self
            .unary
            .chunks_exact(self.num_classes)
            .map(argmin)
            .collect();
        self.to_label_map(&labels)
    }
}

/// Total energy; every pixel must carry a class.
pub fn total_energy(problem: &MrfProblem, labels: &LabelMap) -> Result<f64> {
    let y = problem.check_labels(labels)?;
    Ok(problem.energy_of(&y))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub max_sweeps: usize,
    pub eps: f64,
    /// Weight of the previous message in `[0, 1)`; 0 disables damping.
    pub damping: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            eps: 1e-4,
            damping: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BpDiagnostics {
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
    pub energy: f64,
    /// Wall-clock seconds of each directional sweep, in execution order.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep_timing_s: Vec<f64>,
}

/// Incoming messages per pixel, one plane per neighbor direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    k: usize,
    pub from_above: Vec<f64>,
    pub from_below: Vec<f64>,
    pub from_left: Vec<f64>,
    pub from_right: Vec<f64>,
    pub iteration: usize,
}

impl MessageState {
    fn zeros(pixels: usize, k: usize) -> Self {
        Self {
            k,
            from_above: vec![0.0; pixels * k],
            from_below: vec![0.0; pixels * k],
            from_left: vec![0.0; pixels * k],
            from_right: vec![0.0; pixels * k],
            iteration: 0,
        }
    }

    fn at(plane: &[f64], pixel: usize, k: usize) -> &[f64] {
        &plane[pixel * k..(pixel + 1) * k]
    }

    /// Unary plus every incoming message.
    fn belief(&self, problem: &MrfProblem, pixel: usize, out: &mut [f64]) {
        let k = self.k;
        let u = problem.unary(pixel);
        let planes = [
            &self.from_above,
            &self.from_below,
            &self.from_left,
            &self.from_right,
        ];
        for y in 0..k {
            out[y] = u[y] + planes.iter().map(|p| Self::at(p, pixel, k)[y]).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Direction {
    Up,
    Down,
    Left,
    Right,
}

/// `out[y_j] = min_{y_i} h[y_i] + psi(y_i, y_j)`, shifted so its minimum is 0.
fn min_convolve(h: &[f64], weight: f64, kernel: Kernel, out: &mut [f64]) {
    match kernel {
        Kernel::Potts => {
            let floor = h.iter().copied().fold(f64::INFINITY, f64::min) + weight;
            for (o, &v) in out.iter_mut().zip(h) {
                *o = v.min(floor);
            }
        }
        Kernel::LinearLabel => {
            for (j, o) in out.iter_mut().enumerate() {
                *o = h
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + weight * i.abs_diff(j) as f64)
                    .fold(f64::INFINITY, f64::min);
            }
        }
    }
}

struct Sweeper<'a> {
    problem: &'a MrfProblem,
    damping: f64,
    h: Vec<f64>,
    msg: Vec<f64>,
}

impl Sweeper<'_> {
    /// Recompute the message `sender -> receiver` travelling in `dir`.
    /// Returns the largest entry change.
    fn update(
        &mut self,
        state: &mut MessageState,
        dir: Direction,
        sender: usize,
        receiver: usize,
        affinity: f64,
    ) -> f64 {
        let k = state.k;
        let p = self.problem;
        let u = p.unary(sender);
        // Everything the sender has heard except from the receiver.
        let incoming = match dir {
            Direction::Up => [&state.from_below, &state.from_left, &state.from_right],
            Direction::Down => [&state.from_above, &state.from_left, &state.from_right],
            Direction::Left => [&state.from_right, &state.from_above, &state.from_below],
            Direction::Right => [&state.from_left, &state.from_above, &state.from_below],
        };
        for y in 0..k {
            self.h[y] = u[y]
                + MessageState::at(incoming[0], sender, k)[y]
                + MessageState::at(incoming[1], sender, k)[y]
                + MessageState::at(incoming[2], sender, k)[y];
        }
        min_convolve(&self.h, p.alpha_s * affinity, p.kernel, &mut self.msg);

        let target = match dir {
            Direction::Up => &mut state.from_below,
            Direction::Down => &mut state.from_above,
            Direction::Left => &mut state.from_right,
            Direction::Right => &mut state.from_left,
        };
        let old = &mut target[receiver * k..(receiver + 1) * k];
        if self.damping > 0.0 {
            for (m, &o) in self.msg.iter_mut().zip(old.iter()) {
                *m = (1.0 - self.damping) * *m + self.damping * o;
            }
        }
        let floor = self.msg.iter().copied().fold(f64::INFINITY, f64::min);
        let mut delta: f64 = 0.0;
        for (o, &m) in old.iter_mut().zip(&self.msg) {
            let v = m - floor;
            delta = delta.max((v - *o).abs());
            *o = v;
        }
        delta
    }

    fn sweep(&mut self, state: &mut MessageState, dir: Direction) -> f64 {
        let p = self.problem;
        let (h, w) = (p.height, p.width);
        let mut delta: f64 = 0.0;
        match dir {
            Direction::Up => {
                for r in (1..h).rev() {
                    for c in 0..w {
                        let a = p.vertical_affinity(r - 1, c);
                        delta = delta.max(self.update(state, dir, r * w + c, (r - 1) * w + c, a));
                    }
                }
            }
            Direction::Down => {
                for r in 0..h.saturating_sub(1) {
                    for c in 0..w {
                        let a = p.vertical_affinity(r, c);
                        delta = delta.max(self.update(state, dir, r * w + c, (r + 1) * w + c, a));
                    }
                }
            }
            Direction::Left => {
                for c in (1..w).rev() {
                    for r in 0..h {
                        let a = p.horizontal_affinity(r, c - 1);
                        delta = delta.max(self.update(state, dir, r * w + c, r * w + c - 1, a));
                    }
                }
            }
            Direction::Right => {
                for c in 0..w.saturating_sub(1) {
                    for r in 0..h {
                        let a = p.horizontal_affinity(r, c);
                        delta = delta.max(self.update(state, dir, r * w + c, r * w + c + 1, a));
                    }
                }
            }
        }
        delta
    }
}

/// Labels from the current messages: per-pixel belief argmin.
pub fn decode(problem: &MrfProblem, state: &MessageState) -> LabelMap {
    let k = problem.num_classes;
    let mut belief = vec![0.0; k];
    let labels: Vec<usize> = (0..problem.height * problem.width)
        .map(|i| {
            state.belief(problem, i, &mut belief);
            argmin(&belief)
        })
        .collect();
    problem.to_label_map(&labels)
}

/// Run BP and return the final message state alongside the result.
pub fn bp_run(
    problem: &MrfProblem,
    cfg: &BpConfig,
) -> Result<(LabelMap, BpDiagnostics, MessageState)> {
    if cfg.max_sweeps == 0 {
        return Err(Error::invalid("max_sweeps must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.damping) {
        return Err(Error::invalid("damping must lie in [0, 1)"));
    }
    let k = problem.num_classes;
    let mut state = MessageState::zeros(problem.height * problem.width, k);
    let mut sweeper = Sweeper {
        problem,
        damping: cfg.damping,
        h: vec![0.0; k],
        msg: vec![0.0; k],
    };
    let mut timings = Vec::with_capacity(4 * cfg.max_sweeps);
    let mut delta = f64::INFINITY;
    let mut converged = false;
    while state.iteration < cfg.max_sweeps {
        delta = 0.0;
        for dir in [
            Direction::Up,
            Direction::Down,
            Direction::Left,
            Direction::Right,
        ] {
            let start = Instant::now();
            delta = delta.max(sweeper.sweep(&mut state, dir));
            timings.push(start.elapsed().as_secs_f64());
        }
        state.iteration += 1;
        if delta < cfg.eps {
            converged = true;
            break;
        }
    }
    let labels = decode(problem, &state);
    let energy = total_energy(problem, &labels)?;
    let diagnostics = BpDiagnostics {
        iterations: state.iteration,
        final_delta: delta,
        converged,
        energy,
        sweep_timing_s: timings,
    };
    Ok((labels, diagnostics, state))
}

/// Min-sum BP with up, down, left, right sweeps per iteration.
pub fn bp_solve(problem: &MrfProblem, cfg: &BpConfig) -> Result<(LabelMap, BpDiagnostics)> {
    bp_run(problem, cfg).map(|(labels, diag, _)| (labels, diag))
}

/// Global minimizer by enumeration; ties resolve to the lexicographically
/// smallest labeling (first pixel most significant).
pub fn exhaustive_map(problem: &MrfProblem) -> Result<LabelMap> {
    let n = problem.height * problem.width;
    let k = problem.num_classes;
    let space = (k as u64).checked_pow(n as u32);
    if space.is_none_or(|s| s > EXHAUSTIVE_LIMIT) {
        return Err(Error::invalid(format!(
            "{k}^{n} labelings exceed the enumeration limit"
        )));
    }
    let mut labels = vec![0usize; n];
    let mut best = (problem.energy_of(&labels), labels.clone());
    loop {
        // Odometer increment, last pixel fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(problem.to_label_map(&best.1));
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
        }
        let e = problem.energy_of(&labels);
        if e < best.0 {
            best = (e, labels.clone());
        }
    }
}
