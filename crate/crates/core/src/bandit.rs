//! Approximate GP-UCB in three regimes.
//!
//! Every regime runs the same loop: the privatizer releases `(Sigma~_t, u~_t)`, the
//! learner forms `V_t = Sigma~_t + lambda I`, computes `beta_t^{1/2}` and plays the UCB
//! argmax, and the observation `(phi(x_t), y_t)` goes back to the privatizer. The
//! regimes differ only in the [`Privatizer`] implementation:
//!
//! * [`NonPrivateStats`] releases the exact sums;
//! * [`JdpPrivatizer`] releases tree-mechanism prefix sums shifted by `2 Lambda I`;
//! * [`LocalChannel`] runs the local protocol, where a server holds only perturbed
//!   aggregates received as messages from clients.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;

use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::features::{certify_uniform_error, ApproxCertificate, FeatureKind, FeatureMap};
use crate::kernels::SeKernel;
use crate::posterior::{
    beta_half, select_action, Candidate, ConfidenceParams, NoisyView, PosteriorState,
};
use crate::privacy::{ldp_perturb, psd_shift, JdpConfig, LdpConfig, NoisyTree, SpectralBounds};
use crate::reference::{info_gain, MAX_HISTORY};
use crate::rng::{derived_seed, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    NonPrivate,
    Jdp,
    LocalJdp,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::NonPrivate => "non_private",
            Regime::Jdp => "jdp",
            Regime::LocalJdp => "local_jdp",
        }
    }

    pub fn is_private(self) -> bool {
        self != Regime::NonPrivate
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "non_private" | "nonprivate" | "none" => Ok(Regime::NonPrivate),
            "jdp" => Ok(Regime::Jdp),
            "local_jdp" | "localjdp" | "ldp" => Ok(Regime::LocalJdp),
            other => Err(Error::invalid(format!(
                "unknown regime {other:?} (expected non_private, jdp or local_jdp)"
            ))),
        }
    }
}

/// Everything that determines one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub regime: Regime,
    pub horizon: usize,
    /// Kernel lengthscales, one per input dimension.
    pub lengthscales: Vec<f64>,
    /// Nodes per dimension for QFF; RFF uses `m_bar^d` frequencies.
    pub m_bar: usize,
    pub feature_kind: FeatureKind,
    pub alpha: f64,
    pub beta_priv: f64,
    pub b: f64,
    pub rho: f64,
    pub lambda: f64,
    pub zeta: f64,
    /// Multiplies every calibrated privacy noise scale; 0 gives exact statistics.
    pub noise_multiplier: f64,
    pub env: EnvSpec,
    pub seed: u64,
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.env.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let key = |key: &str, msg: String| Error::ConfigKey {
            key: key.to_string(),
            msg,
        };
        if self.horizon == 0 {
            return Err(key("T", "horizon must be at least 1".into()));
        }
        if self.lengthscales.len() != self.dim() {
            return Err(key(
                "nu",
                format!(
                    "{} lengthscales for a {}-dimensional environment",
                    self.lengthscales.len(),
                    self.dim()
                ),
            ));
        }
        if self
            .lengthscales
            .iter()
            .any(|l| !(*l > 0.0 && l.is_finite()))
        {
            return Err(key("nu", "lengthscales must be positive".into()));
        }
        if self.m_bar == 0 {
            return Err(key("m_bar", "must be at least 1".into()));
        }
        for (name, v) in [("B", self.b), ("rho", self.rho), ("lambda", self.lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(key(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(key("zeta", format!("must lie in (0,1), got {}", self.zeta)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(key("noise_multiplier", "must be non-negative".into()));
        }
        if self.regime.is_private() {
            if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                return Err(key(
                    "alpha",
                    format!("must be positive, got {}", self.alpha),
                ));
            }
            if !(self.beta_priv > 0.0 && self.beta_priv < 1.0) {
                return Err(key(
                    "beta_priv",
                    format!("must lie in (0,1), got {}", self.beta_priv),
                ));
            }
        }
        if self.env.n_candidates() < 2 {
            return Err(key("n_candidates", "need at least 2 candidates".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<SeKernel> {
        SeKernel::new(self.lengthscales.clone())
    }

    pub fn feature_map(&self) -> Result<FeatureMap> {
        match self.feature_kind {
            FeatureKind::Qff => FeatureMap::qff(&self.lengthscales, self.m_bar),
            FeatureKind::Rff => {
                let m = (self.m_bar as u64)
                    .checked_pow(self.dim() as u32)
                    .filter(|m| *m <= crate::features::MAX_QFF_FREQUENCIES as u64)
                    .ok_or_else(|| Error::invalid("m_bar^d is too large"))?;
                FeatureMap::rff(
                    &self.lengthscales,
                    m as usize,
                    derived_seed(self.seed, Stream::Policy),
                )
            }
        }
    }
}

/// Per-round log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub action_id: usize,
    pub reward: f64,
    pub inst_regret: f64,
    pub beta: f64,
    pub cum_regret: f64,
    /// Whether every candidate's value lay in `mu~ +- beta^{1/2} sigma~` (when tracked).
    pub covered: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    /// Server to client: the current perturbed aggregates.
    Params,
    /// Client to server: one perturbed increment.
    Update,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round: usize,
    pub kind: MessageKind,
    /// `(matrix, vector)` payload, kept only when the trace is recorded in full.
    pub payload: Option<(DMatrix<f64>, DVector<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    #[default]
    Off,
    /// Round and kind of every message.
    Shape,
    /// Full payloads.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub track_coverage: bool,
    /// Computes the information gain of the played actions (at most `MAX_HISTORY` rounds).
    pub info_gain: bool,
    pub trace: TraceMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rounds: Vec<RoundRecord>,
    pub certificate: ApproxCertificate,
    /// Spectral bounds used for the confidence width; absent without privacy noise.
    pub spectral: Option<SpectralBounds>,
    pub info_gain: Option<f64>,
    pub trace: Vec<Message>,
}

impl RunRecord {
    pub fn cumulative_regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn actions(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.action_id).collect()
    }
}

/// Server side of the loop: releases statistics and absorbs observations.
pub trait Privatizer {
    /// Statistics `(Sigma~_t, u~_t)` available before round `t` (1-based), shifted.
    fn release(&mut self, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)>;
    fn absorb(&mut self, t: usize, phi: &DVector<f64>, y: f64) -> Result<()>;
    /// Bounds on the released noise, `None` when the statistics are exact.
    fn bounds(&self) -> Option<SpectralBounds>;
}

pub struct NonPrivateStats {
    state: PosteriorState,
}

impl NonPrivateStats {
    pub fn new(dim: usize) -> Self {
        Self {
            state: PosteriorState::new(dim),
        }
    }
}

impl Privatizer for NonPrivateStats {
    fn release(&mut self, _t: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        Ok((self.state.sigma.clone(), self.state.u.clone()))
    }

    fn absorb(&mut self, _t: usize, phi: &DVector<f64>, y: f64) -> Result<()> {
        self.state.update(phi, y)
    }

    fn bounds(&self) -> Option<SpectralBounds> {
        None
    }
}

/// Tree-mechanism privatizer over the blocks `[phi; y][phi; y]^T`.
pub struct JdpPrivatizer {
    tree: NoisyTree,
    spectral: SpectralBounds,
}

impl JdpPrivatizer {
    pub fn new(cfg: &JdpConfig, zeta: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            tree: NoisyTree::new(cfg.horizon, cfg.m + 1, cfg.sigma, seed)?,
            spectral: cfg.spectral(zeta)?,
        })
    }

    pub fn tree(&self) -> &NoisyTree {
        &self.tree
    }
}

impl Privatizer for JdpPrivatizer {
    fn release(&mut self, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let prefix = self.tree.prefix(t)?;
        let shift = if self.spectral.is_degenerate() {
            0.0
        } else {
            self.spectral.big_lambda
        };
        Ok((psd_shift(&prefix.sigma(), shift), prefix.u()))
    }

    fn absorb(&mut self, t: usize, phi: &DVector<f64>, y: f64) -> Result<()> {
        let m = phi.len();
        let v = DVector::from_fn(m + 1, |i, _| if i < m { phi[i] } else { y });
        self.tree.insert_outer(t, &v).map(|_| ())
    }

    fn bounds(&self) -> Option<SpectralBounds> {
        (!self.spectral.is_degenerate()).then_some(self.spectral)
    }
}

/// Server of the local protocol. It only ever sees [`Message`] payloads.
pub struct Server {
    sigma: DMatrix<f64>,
    u: DVector<f64>,
    received: usize,
}

impl Server {
    pub fn new(dim: usize) -> Self {
        Self {
            sigma: DMatrix::zeros(dim, dim),
            u: DVector::zeros(dim),
            received: 0,
        }
    }

    pub fn send(&self, round: usize) -> Message {
        Message {
            round,
            kind: MessageKind::Params,
            payload: Some((self.sigma.clone(), self.u.clone())),
        }
    }

    pub fn receive(&mut self, msg: &Message) -> Result<()> {
        match (&msg.kind, &msg.payload) {
            (MessageKind::Update, Some((ds, du))) if msg.round == self.received + 1 => {
                self.sigma += ds;
                self.u += du;
                self.received += 1;
                Ok(())
            }
            _ => Err(Error::InvalidState(format!(
                "server expected the update of round {}, got {:?} for round {}",
                self.received + 1,
                msg.kind,
                msg.round
            ))),
        }
    }

    pub fn aggregates(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.sigma, &self.u)
    }
}

/// Client of round `t`: perturbs its own observation before anything leaves it.
pub struct Client<'a> {
    cfg: &'a LdpConfig,
    rng: &'a mut ChaCha20Rng,
}

impl<'a> Client<'a> {
    pub fn new(cfg: &'a LdpConfig, rng: &'a mut ChaCha20Rng) -> Self {
        Self { cfg, rng }
    }

    pub fn update_message(&mut self, round: usize, phi: &DVector<f64>, y: f64) -> Result<Message> {
        let payload = ldp_perturb(phi, y, self.cfg, self.rng)?;
        Ok(Message {
            round,
            kind: MessageKind::Update,
            payload: Some(payload),
        })
    }
}

/// In-process message exchange between one [`Server`] and the per-round clients.
pub struct LocalChannel {
    server: Server,
    cfg: LdpConfig,
    spectral: SpectralBounds,
    client_rng: ChaCha20Rng,
    mode: TraceMode,
    trace: Vec<Message>,
}

impl LocalChannel {
    pub fn new(
        cfg: LdpConfig,
        zeta: f64,
        client_rng: ChaCha20Rng,
        mode: TraceMode,
    ) -> Result<Self> {
        Ok(Self {
            server: Server::new(cfg.m),
            spectral: cfg.spectral(zeta)?,
            cfg,
            client_rng,
            mode,
            trace: Vec::new(),
        })
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    fn log(&mut self, msg: Message) {
        match self.mode {
            TraceMode::Off => {}
            TraceMode::Shape => self.trace.push(Message {
                payload: None,
                ..msg
            }),
            TraceMode::Full => self.trace.push(msg),
        }
    }

    pub fn into_trace(self) -> Vec<Message> {
        self.trace
    }
}

impl Privatizer for LocalChannel {
    fn release(&mut self, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let msg = self.server.send(t);
        let (sigma, u) = msg.payload.clone().expect("server messages carry payloads");
        self.log(msg);
        let shift = if self.spectral.is_degenerate() {
            0.0
        } else {
            self.spectral.big_lambda * self.cfg.sigma_x
        };
        Ok((psd_shift(&sigma, shift), u))
    }

    fn absorb(&mut self, t: usize, phi: &DVector<f64>, y: f64) -> Result<()> {
        let msg = Client::new(&self.cfg, &mut self.client_rng).update_message(t, phi, y)?;
        self.server.receive(&msg)?;
        self.log(msg);
        Ok(())
    }

    fn bounds(&self) -> Option<SpectralBounds> {
        (!self.spectral.is_degenerate()).then_some(self.spectral)
    }
}

/// Privacy calibration of a run (noise scales already multiplied by `noise_multiplier`).
pub fn jdp_config(cfg: &RunConfig, m: usize) -> Result<JdpConfig> {
    let base = JdpConfig::new(cfg.alpha, cfg.beta_priv, cfg.horizon, cfg.b, cfg.rho, m)?;
    let sigma = base.sigma * cfg.noise_multiplier;
    Ok(base.with_sigma(sigma))
}

pub fn ldp_config(cfg: &RunConfig, m: usize) -> Result<LdpConfig> {
    let base = LdpConfig::new(cfg.alpha, cfg.beta_priv, cfg.b, m, cfg.horizon)?;
    let (sx, su) = (
        base.sigma_x * cfg.noise_multiplier,
        base.sigma_u * cfg.noise_multiplier,
    );
    Ok(base.with_scales(sx, su))
}

/// The feature map and its certificate on the environment's domain grid.
pub fn prepare(cfg: &RunConfig) -> Result<(FeatureMap, SeKernel, ApproxCertificate)> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let map = cfg.feature_map()?;
    let certificate = certify_uniform_error(&map, &kernel, &cfg.env.domain_grid())?;
    Ok((map, kernel, certificate))
}

pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    run_with(cfg, RunOptions::default())
}

/// Runs the local protocol and returns the record with its full message trace.
pub fn run_ldp_protocol(cfg: &RunConfig) -> Result<RunRecord> {
    if cfg.regime != Regime::LocalJdp {
        return Err(Error::invalid(
            "the local protocol requires the local_jdp regime",
        ));
    }
    run_with(
        cfg,
        RunOptions {
            trace: TraceMode::Full,
            ..RunOptions::default()
        },
    )
}

pub fn run_with(cfg: &RunConfig, opts: RunOptions) -> Result<RunRecord> {
    let (map, kernel, certificate) = prepare(cfg)?;
    let env = cfg
        .env
        .build(&kernel, stream(cfg.seed, Stream::Environment))?;
    let m = map.output_dim();
    match cfg.regime {
        Regime::NonPrivate => {
            let mut p = NonPrivateStats::new(m);
            drive(cfg, opts, &map, &kernel, certificate, env, &mut p).map(|(r, _)| r)
        }
        Regime::Jdp => {
            let jdp = jdp_config(cfg, m)?;
            let mut p =
                JdpPrivatizer::new(&jdp, cfg.zeta, derived_seed(cfg.seed, Stream::TreeNoise))?;
            drive(cfg, opts, &map, &kernel, certificate, env, &mut p).map(|(r, _)| r)
        }
        Regime::LocalJdp => {
            let ldp = ldp_config(cfg, m)?;
            let rng = stream(cfg.seed, Stream::PrivacyNoise);
            let mut p = LocalChannel::new(ldp, cfg.zeta, rng, opts.trace)?;
            let (mut record, _) = drive(cfg, opts, &map, &kernel, certificate, env, &mut p)?;
            record.trace = p.into_trace();
            Ok(record)
        }
    }
}

/// The regime-independent loop. Returns the record and the played points.
pub fn drive<P: Privatizer + ?Sized>(
    cfg: &RunConfig,
    opts: RunOptions,
    map: &FeatureMap,
    kernel: &SeKernel,
    certificate: ApproxCertificate,
    mut env: Box<dyn Environment + Send>,
    privatizer: &mut P,
) -> Result<(RunRecord, Vec<Vec<f64>>)> {
    let params = ConfidenceParams {
        b: cfg.b,
        rho: cfg.rho,
        lambda: cfg.lambda,
        zeta: cfg.zeta,
        eps: certificate.measured,
        noise: privatizer
            .bounds()
            .map_or(crate::posterior::NoiseBounds::None, |s| s.noise_bounds()),
    };
    params.validate()?;
    let mut rounds = Vec::with_capacity(cfg.horizon);
    let mut played = Vec::with_capacity(cfg.horizon);
    let mut cum = 0.0;
    for t in 1..=cfg.horizon {
        let set = env.next_decision_set()?;
        let candidates = set
            .points
            .iter()
            .enumerate()
            .map(|(id, p)| {
                Ok(Candidate {
                    id,
                    phi: map.embed(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (sigma, u) = privatizer.release(t)?;
        let view = NoisyView::new(sigma, u, cfg.lambda).map_err(|e| {
            Error::Numeric(format!(
                "round {t}: V is not positive definite ({e}); noise shift too small"
            ))
        })?;
        let beta = beta_half(&params, &view, t)?;
        let idx = select_action(&view, beta, &candidates, cfg.rho)?;
        let covered = opts.track_coverage.then(|| {
            candidates.iter().zip(&set.values).all(|(c, f)| {
                let (mu, sd) = view.predict(&c.phi, cfg.rho);
                (f - mu).abs() <= beta * sd
            })
        });
        let y = env.reward(&set, idx);
        let inst = set.regret(idx).max(0.0);
        cum += inst;
        rounds.push(RoundRecord {
            action_id: idx,
            reward: y,
            inst_regret: inst,
            beta,
            cum_regret: cum,
            covered,
        });
        privatizer.absorb(t, &candidates[idx].phi, y)?;
        played.push(set.points[idx].clone());
    }
    let info = if opts.info_gain && played.len() <= MAX_HISTORY {
        Some(info_gain(&played, kernel, cfg.lambda)?)
    } else {
        None
    };
    let record = RunRecord {
        rounds,
        certificate,
        spectral: privatizer.bounds(),
        info_gain: info,
        trace: Vec::new(),
    };
    Ok((record, played))
}
