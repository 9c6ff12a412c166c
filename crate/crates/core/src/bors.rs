//! Binary-order representative sampling.
//!
//! A video of `n` frames is downsampled at rate `gamma`, split into `T` sliding windows
//! of size `zeta = alpha * xi` and stride `xi`, and each window elects `r` representatives
//! by walking a balanced binary tree over its frame range in breadth-first order. The
//! `m`-th representative of every window forms sequence `S^m`.
//!
//! All indices are 1-based, as in the manifest format.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BorsError {
    #[error("insufficient frames: need n >= γ(T+α−1) = {gamma}·({windows}+{alpha}−1) = {required}, got n = {frames}")]
    InsufficientFrames {
        frames: usize,
        gamma: usize,
        windows: usize,
        alpha: usize,
        required: usize,
    },
    #[error("insufficient frames: {frames} frames cannot be downsampled at rate {gamma}")]
    BelowSampleRate { frames: usize, gamma: usize },
    #[error("window ({start},{end}) has only {available} representatives, {requested} requested")]
    ExhaustedWindow {
        start: usize,
        end: usize,
        available: usize,
        requested: usize,
    },
    #[error("halving order needs (1+ζ) divisible by 2^r; ζ = {zeta}, r = {r}")]
    IndivisibleWindow { zeta: usize, r: usize },
    #[error("invalid sampling parameter: {0}")]
    InvalidParam(String),
}

/// How representatives are elected inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderMode {
    /// Breadth-first order over the binary tree of the window.
    #[default]
    Bfs,
    /// Closed form `(a − 1) + (1 + ζ)/2^m`, valid when `(1 + ζ)` is divisible by `2^r`.
    Halving,
}

impl fmt::Display for OrderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderMode::Bfs => "bfs",
            OrderMode::Halving => "halving",
        })
    }
}

impl FromStr for OrderMode {
    type Err = BorsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bfs" => Ok(OrderMode::Bfs),
            "halving" => Ok(OrderMode::Halving),
            other => Err(BorsError::InvalidParam(format!(
                "unknown order mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingParams {
    /// Downsampling rate γ.
    pub gamma: usize,
    /// Window count `T`, which is also the sequence length.
    pub windows: usize,
    /// Ratio α of window size to stride.
    pub alpha: usize,
    /// Sampling times `r`: sequences generated per video.
    pub r: usize,
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), BorsError> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("windows", self.windows),
            ("alpha", self.alpha),
            ("r", self.r),
        ] {
            if v == 0 {
                return Err(BorsError::InvalidParam(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Smallest frame count that admits `T` windows: `γ(T + α − 1)`.
    pub fn min_frames(&self) -> usize {
        self.gamma * (self.windows + self.alpha - 1)
    }

    pub fn check_frames(&self, n: usize) -> Result<(), BorsError> {
        self.validate()?;
        if n < self.min_frames() {
            return Err(BorsError::InsufficientFrames {
                frames: n,
                gamma: self.gamma,
                windows: self.windows,
                alpha: self.alpha,
                required: self.min_frames(),
            });
        }
        Ok(())
    }
}

/// Inclusive, 1-based frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(1 <= start && start <= end, "invalid window ({start},{end})");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    /// Frame count after downsampling.
    pub frames: usize,
    /// Stride ξ.
    pub stride: usize,
    /// Window size ζ = α·ξ.
    pub size: usize,
    pub windows: Vec<Window>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSet {
    /// `sequences[m]` is `S^{m+1}`, holding original-video frame indices.
    pub sequences: Vec<Vec<usize>>,
    /// `None` for random sampling.
    pub order_mode: Option<OrderMode>,
}

/// Keeps the first frame of every γ-block and drops the trailing `n mod γ` frames.
pub fn downsample(n: usize, gamma: usize) -> Result<Vec<usize>, BorsError> {
    if gamma == 0 {
        return Err(BorsError::InvalidParam("gamma must be >= 1".into()));
    }
    if n < gamma {
        return Err(BorsError::BelowSampleRate { frames: n, gamma });
    }
    Ok((0..n / gamma).map(|j| j * gamma + 1).collect())
}

/// Partitions `m` downsampled frames into `T` windows with stride `⌊m / (T + α − 1)⌋`.
pub fn plan_windows(m: usize, windows: usize, alpha: usize) -> Result<WindowPlan, BorsError> {
    if windows == 0 || alpha == 0 {
        return Err(BorsError::InvalidParam(
            "windows and alpha must be >= 1".into(),
        ));
    }
    let slots = windows + alpha - 1;
    if m < slots {
        return Err(BorsError::InsufficientFrames {
            frames: m,
            gamma: 1,
            windows,
            alpha,
            required: slots,
        });
    }
    let stride = m / slots;
    let size = alpha * stride;
    let windows = (0..windows)
        .map(|w| Window::new(w * stride + 1, w * stride + size))
        .collect();
    Ok(WindowPlan {
        frames: m,
        stride,
        size,
        windows,
    })
}

/// Breadth-first traversal of the binary tree over a window; yields every index once.
pub fn bfs_order(window: Window) -> impl Iterator<Item = usize> {
    let mut queue = VecDeque::from([(window.start, window.end)]);
    std::iter::from_fn(move || {
        let (a, b) = queue.pop_front()?;
        let mid = a + (b - a) / 2;
        if mid > a {
            queue.push_back((a, mid - 1));
        }
        if mid < b {
            queue.push_back((mid + 1, b));
        }
        Some(mid)
    })
}

pub fn representatives(window: Window, r: usize, mode: OrderMode) -> Result<Vec<usize>, BorsError> {
    if r == 0 {
        return Err(BorsError::InvalidParam("r must be >= 1".into()));
    }
    let zeta = window.len();
    match mode {
        OrderMode::Bfs => {
            if r > zeta {
                return Err(BorsError::ExhaustedWindow {
                    start: window.start,
                    end: window.end,
                    available: zeta,
                    requested: r,
                });
            }
            Ok(bfs_order(window).take(r).collect())
        }
        OrderMode::Halving => {
            let divisor = u32::try_from(r)
                .ok()
                .and_then(|r| 1usize.checked_shl(r))
                .filter(|&d| (1 + zeta).is_multiple_of(d))
                .ok_or(BorsError::IndivisibleWindow { zeta, r })?;
            debug_assert!(divisor <= 1 + zeta);
            Ok((1..=r)
                .map(|m| window.start - 1 + (1 + zeta) / (1 << m))
                .collect())
        }
    }
}

fn windowed(n: usize, params: &SamplingParams) -> Result<(Vec<usize>, WindowPlan), BorsError> {
    params.check_frames(n)?;
    let kept = downsample(n, params.gamma)?;
    let plan = plan_windows(kept.len(), params.windows, params.alpha)?;
    Ok((kept, plan))
}

/// Collects per-window representative lists into sequences `S^1..S^r` of original frame indices.
fn assemble(
    kept: &[usize],
    per_window: Vec<Vec<usize>>,
    r: usize,
    order_mode: Option<OrderMode>,
) -> SequenceSet {
    let sequences = (0..r)
        .map(|m| per_window.iter().map(|reps| kept[reps[m] - 1]).collect())
        .collect();
    SequenceSet {
        sequences,
        order_mode,
    }
}

pub fn generate_sequences(
    n: usize,
    params: &SamplingParams,
    mode: OrderMode,
) -> Result<SequenceSet, BorsError> {
    let (kept, plan) = windowed(n, params)?;
    let per_window = plan
        .windows
        .iter()
        .map(|&w| representatives(w, params.r, mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(&kept, per_window, params.r, Some(mode)))
}

/// Same windows as [`generate_sequences`], but each window's representatives are drawn
/// uniformly without replacement.
pub fn random_sequences(
    n: usize,
    params: &SamplingParams,
    seed: u64,
) -> Result<SequenceSet, BorsError> {
    let (kept, plan) = windowed(n, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_window = plan
        .windows
        .iter()
        .map(|w| {
            if params.r > w.len() {
                return Err(BorsError::ExhaustedWindow {
                    start: w.start,
                    end: w.end,
                    available: w.len(),
                    requested: params.r,
                });
            }
            Ok(sample(&mut rng, w.len(), params.r)
                .into_iter()
                .map(|i| w.start + i)
                .collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(&kept, per_window, params.r, None))
}

/// Writes manifest lines `video_id,seq_index,i1,i2,...` with 1-based sequence indices.
pub fn manifest_lines(video_id: &str, set: &SequenceSet) -> Vec<String> {
    set.sequences
        .iter()
        .enumerate()
        .map(|(m, seq)| {
            let idx: Vec<String> = seq.iter().map(usize::to_string).collect();
            format!("{video_id},{},{}", m + 1, idx.join(","))
        })
        .collect()
}
