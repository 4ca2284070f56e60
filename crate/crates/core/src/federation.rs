//! The federated round loop.
//!
//! Each round the server samples clients, broadcasts the current keys `W1`,
//! lets every selected client run local SGD on its own shard, and replaces
//! `W1` by the sample-weighted average of the returned keys. Clients only
//! ever hand back a [`ClientReport`]: keys and scalar losses.
//!
//! Randomness is keyed by `(seed, round)` for sampling and
//! `(seed, round, client, epoch)` for batch shuffling, and aggregation runs
//! in ascending client id, so results do not depend on thread scheduling.

use rand::seq::index;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{self, CacheModel};
use crate::error::{Error, Result};
use crate::features::{FeatureDataset, TextHead};
use crate::numerics::Matrix;
use crate::partition::Partition;
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr * gamma / (round - 1 + gamma)`
    InverseT { gamma: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, round: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::InverseT { gamma } => base * gamma / (round.saturating_sub(1) as f64 + gamma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub num_clients: usize,
    /// `None` trains every client that holds data, every round.
    pub clients_per_round: Option<usize>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    /// FedProx proximal weight; 0 gives plain local SGD.
    pub prox_mu: f64,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// `None` uses the whole shard as one batch.
    pub batch_size: Option<usize>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            num_clients: 10,
            clients_per_round: None,
            rounds: 20,
            local_epochs: 1,
            lr: 0.001,
            alpha: cache::DEFAULT_ALPHA,
            beta: cache::DEFAULT_BETA,
            prox_mu: 0.0,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            batch_size: None,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.num_clients == 0 {
            return bad("num_clients must be at least 1".into());
        }
        if let Some(k) = self.clients_per_round {
            if k == 0 || k > self.num_clients {
                return bad(format!(
                    "clients_per_round must lie in 1..={}, got {k}",
                    self.num_clients
                ));
            }
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("prox_mu", self.prox_mu)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if let LrSchedule::InverseT { gamma } = self.lr_schedule {
            if !(gamma.is_finite() && gamma > 0.0) {
                return bad(format!("inverse_t gamma must be positive, got {gamma}"));
            }
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn participants(&self) -> usize {
        self.clients_per_round.unwrap_or(self.num_clients)
    }

    pub fn lr_at(&self, round: usize) -> f64 {
        self.lr_schedule.rate(self.lr, round)
    }
}

/// Everything a client sends back to the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientReport {
    pub w1: Matrix,
    /// Mean batch loss of each local epoch.
    pub losses: Vec<f64>,
}

/// The server's view of a client: an id, a sample count and an update call.
pub trait FederatedClient: Sync {
    fn id(&self) -> usize;
    fn num_samples(&self) -> usize;
    fn update(&self, round: usize, global_w1: &Matrix, cfg: &FederationConfig) -> Result<ClientReport>;
}

/// A simulated client holding a private shard.
#[derive(Clone, Debug)]
pub struct LocalClient {
    id: usize,
    shard: FeatureDataset,
    frozen: CacheModel,
    text_head: TextHead,
}

impl LocalClient {
    pub fn new(id: usize, shard: FeatureDataset, frozen: CacheModel, text_head: TextHead) -> Self {
        LocalClient {
            id,
            shard,
            frozen,
            text_head,
        }
    }
}

impl FederatedClient for LocalClient {
    fn id(&self) -> usize {
        self.id
    }

    fn num_samples(&self) -> usize {
        self.shard.len()
    }

    fn update(&self, round: usize, global_w1: &Matrix, cfg: &FederationConfig) -> Result<ClientReport> {
        let model = self
            .frozen
            .with_keys(global_w1.clone())?
            .with_fusion(cfg.alpha, cfg.beta)?;
        let (w1, mut losses) = client_update(self.id, &model, &self.text_head, &self.shard, cfg, round)?;
        if losses.is_empty() {
            losses.push(cache::loss(&model, &self.text_head, self.shard.features(), self.shard.labels())?);
        }
        Ok(ClientReport { w1, losses })
    }
}

/// Uniform sample of `K` clients without replacement among those holding
/// data, drawn from the `(seed, round)` stream and returned in ascending id.
pub fn sample_clients(round: usize, cfg: &FederationConfig, counts: &[usize]) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
    let wanted = match cfg.clients_per_round {
        None => return Ok(eligible),
        Some(k) => k,
    };
    if wanted > eligible.len() {
        return Err(Error::Sampling {
            wanted,
            available: eligible.len(),
        });
    }
    if wanted == eligible.len() {
        return Ok(eligible);
    }
    let mut r = rng::stream(cfg.seed, &[tag::SAMPLING, round as u64]);
    let mut picked: Vec<usize> = index::sample(&mut r, eligible.len(), wanted)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Local training: `E` epochs of SGD on `W1` starting from the broadcast
/// keys. With `prox_mu > 0` the gradient gains `prox_mu * (W1 - W1_global)`.
/// Returns the new keys and the mean batch loss of each epoch.
pub fn client_update(
    client: usize,
    global: &CacheModel,
    head: &TextHead,
    shard: &FeatureDataset,
    cfg: &FederationConfig,
    round: usize,
) -> Result<(Matrix, Vec<f64>)> {
    if shard.is_empty() {
        return Err(Error::EmptyShard(client));
    }
    let lr = cfg.lr_at(round);
    let n = shard.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut model = global.clone();
    let mut trace = Vec::with_capacity(cfg.local_epochs);

    for epoch in 0..cfg.local_epochs {
        if batch < n {
            let mut r = rng::stream(
                cfg.seed,
                &[tag::CLIENT, round as u64, client as u64, epoch as u64],
            );
            order.shuffle(&mut r);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(batch) {
            let (features, labels) = if batch == n {
                (shard.features().clone(), shard.labels().to_vec())
            } else {
                let sub = shard.subset(chunk);
                (sub.features().clone(), sub.labels().to_vec())
            };
            let (loss, mut grad) = cache::loss_and_grad_w1(&model, head, &features, &labels)?;
            if cfg.prox_mu > 0.0 {
                let drift = model.w1().sub(global.w1())?;
                grad.scaled_add_assign(cfg.prox_mu, &drift)?;
            }
            model = cache::sgd_step(&model, &grad, lr)?;
            epoch_loss += loss;
            steps += 1;
        }
        trace.push(epoch_loss / steps as f64);
    }
    Ok((model.w1().clone(), trace))
}

/// Sample-weighted average of client keys, normalised by the mass of the
/// participating clients and summed in ascending client id.
///
/// Written as `W_first + sum_k w_k (W_k - W_first)` so identical inputs come
/// back bit-for-bit.
pub fn aggregate(updates: &[(usize, Matrix)], counts: &[usize]) -> Result<Matrix> {
    if updates.is_empty() {
        return Err(Error::Aggregation("no client updates".into()));
    }
    let mut order: Vec<&(usize, Matrix)> = updates.iter().collect();
    order.sort_by_key(|(id, _)| *id);
    if order.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Aggregation("duplicate client id".into()));
    }
    let mut mass = 0usize;
    for (id, w) in &order {
        let n_k = *counts
            .get(*id)
            .ok_or_else(|| Error::Aggregation(format!("unknown client {id}")))?;
        mass += n_k;
        order[0].1.same_shape(w, "aggregate")?;
    }
    if mass == 0 {
        return Err(Error::Aggregation("participating clients hold no samples".into()));
    }
    let anchor = &order[0].1;
    let mut out = anchor.clone();
    for (id, w) in &order[1..] {
        let weight = counts[*id] as f64 / mass as f64;
        out.scaled_add_assign(weight, &w.sub(anchor)?)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub selected: Vec<usize>,
    /// Final-epoch loss of each selected client, in `selected` order.
    pub local_losses: Vec<f64>,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub params_uploaded: u64,
    pub flops_estimate: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub global_model: CacheModel,
    pub round: usize,
    /// Test accuracy of the freshly initialised cache.
    pub initial_accuracy: f64,
    pub history: Vec<RoundLog>,
}

impl ServerState {
    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(self.initial_accuracy, |l| l.accuracy)
    }
}

/// Runs `cfg.rounds` rounds of sample, broadcast, local update, aggregate,
/// evaluate.
pub fn run_training<C: FederatedClient>(
    initial: &CacheModel,
    clients: &[C],
    text_head: &TextHead,
    test: &FeatureDataset,
    cfg: &FederationConfig,
) -> Result<ServerState> {
    cfg.validate()?;
    if clients.len() != cfg.num_clients {
        return Err(Error::Invalid(format!(
            "config expects {} clients, {} provided",
            cfg.num_clients,
            clients.len()
        )));
    }
    if let Some(bad) = clients.iter().enumerate().find(|(i, c)| c.id() != *i) {
        return Err(Error::Invalid(format!("client at position {} reports id {}", bad.0, bad.1.id())));
    }
    let counts: Vec<usize> = clients.iter().map(|c| c.num_samples()).collect();
    let mut global = initial.clone().with_fusion(cfg.alpha, cfg.beta)?;
    let initial_accuracy = cache::evaluate(&global, text_head, test)?;
    let dims = CostDims::of(&global, 0);
    let mut history = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let selected = sample_clients(round, cfg, &counts)?;
        let w1 = global.w1().clone();
        let reports: Vec<ClientReport> = selected
            .par_iter()
            .map(|&k| clients[k].update(round, &w1, cfg))
            .collect::<Result<_>>()?;
        let updates: Vec<(usize, Matrix)> = selected
            .iter()
            .zip(&reports)
            .map(|(&k, r)| (k, r.w1.clone()))
            .collect();
        global = global.with_keys(aggregate(&updates, &counts)?)?;

        let local_losses: Vec<f64> = reports
            .iter()
            .map(|r| r.losses.last().copied().unwrap_or(f64::NAN))
            .collect();
        let finite: Vec<f64> = local_losses.iter().copied().filter(|v| v.is_finite()).collect();
        let mean_loss = if finite.is_empty() {
            0.0
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let flops = selected
            .iter()
            .map(|&k| client_flops(&dims, counts[k], cfg))
            .sum();
        history.push(RoundLog {
            round,
            params_uploaded: (selected.len() * dims.feature_dim * dims.cache_size) as u64,
            flops_estimate: flops,
            accuracy: cache::evaluate(&global, text_head, test)?,
            selected,
            local_losses,
            mean_loss,
        });
    }

    Ok(ServerState {
        global_model: global,
        round: cfg.rounds,
        initial_accuracy,
        history,
    })
}

/// Simulated deployment: cache, text head, test set and one client per shard.
#[derive(Clone, Debug)]
pub struct Federation {
    pub initial: CacheModel,
    pub text_head: TextHead,
    pub test: FeatureDataset,
    pub clients: Vec<LocalClient>,
}

impl Federation {
    pub fn new(
        initial: CacheModel,
        text_head: TextHead,
        train: &FeatureDataset,
        test: FeatureDataset,
        partition: &Partition,
    ) -> Result<Self> {
        if partition.total() != train.len() {
            return Err(Error::Invalid(format!(
                "partition covers {} samples, training set has {}",
                partition.total(),
                train.len()
            )));
        }
        let clients = partition
            .shards()
            .iter()
            .enumerate()
            .map(|(k, shard)| LocalClient::new(k, train.subset(shard), initial.clone(), text_head.clone()))
            .collect();
        Ok(Federation {
            initial,
            text_head,
            test,
            clients,
        })
    }

    pub fn run(&self, cfg: &FederationConfig) -> Result<ServerState> {
        run_training(&self.initial, &self.clients, &self.text_head, &self.test, cfg)
    }
}

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostDims {
    pub feature_dim: usize,
    pub cache_size: usize,
    pub num_classes: usize,
    /// Shard size assumed for every participating client.
    pub samples_per_client: usize,
}

impl CostDims {
    pub fn of(model: &CacheModel, samples_per_client: usize) -> Self {
        CostDims {
            feature_dim: model.feature_dim(),
            cache_size: model.cache_size(),
            num_classes: model.num_classes(),
            samples_per_client,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params_per_round: u64,
    pub flops_per_round: u64,
}

// Multiply-adds count as two FLOPs. With C features, M cached keys, N classes:
//
//   per sample   zero-shot 2CN, similarity 2CM, affinity 3M, adapter 2MN,
//                fusion 2N, softmax + loss 4N, logit grad 2N, affinity grad
//                2MN, elementwise 2M, key grad 2CM
//                = 4CM + 2CN + 4MN + 5M + 8N
//   per step     beta scaling and update 3CM, plus 3CM for the prox term
fn per_sample_flops(d: &CostDims) -> u64 {
    let (c, m, n) = (d.feature_dim as u64, d.cache_size as u64, d.num_classes as u64);
    4 * c * m + 2 * c * n + 4 * m * n + 5 * m + 8 * n
}

fn per_step_flops(d: &CostDims, prox: bool) -> u64 {
    let cm = (d.feature_dim * d.cache_size) as u64;
    if prox {
        6 * cm
    } else {
        3 * cm
    }
}

fn client_flops(d: &CostDims, samples: usize, cfg: &FederationConfig) -> u64 {
    if samples == 0 {
        return 0;
    }
    let batch = cfg.batch_size.unwrap_or(samples).min(samples);
    let steps = samples.div_ceil(batch) as u64;
    cfg.local_epochs as u64
        * (samples as u64 * per_sample_flops(d) + steps * per_step_flops(d, cfg.prox_mu > 0.0))
}

/// Keys uploaded and training FLOPs per round when `K` clients of
/// `samples_per_client` samples participate. Only `W1` travels.
pub fn cost_accounting(cfg: &FederationConfig, dims: &CostDims) -> CostReport {
    let k = cfg.participants() as u64;
    CostReport {
        params_per_round: k * (dims.feature_dim * dims.cache_size) as u64,
        flops_per_round: k * client_flops(dims, dims.samples_per_client, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::init_cache;
    use crate::features::{generate_world, SynthSpec, World};
    use crate::partition::{partition, PartitionSpec, Scheme};

    fn world(seed: u64) -> World {
        generate_world(&SynthSpec {
            feature_dim: 16,
            num_classes: 4,
            shots_per_class: 4,
            train_per_class: 8,
            test_per_class: 10,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn scalar(v: f64) -> Matrix {
        Matrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn weighted_mean_of_two() {
        let w = aggregate(&[(0, scalar(0.0)), (1, scalar(4.0))], &[1, 3]).unwrap();
        assert_eq!(w.get(0, 0), 3.0);
    }

    #[test]
    fn identical_updates_are_a_fixed_point() {
        let m = Matrix::from_rows(&[vec![0.1, -0.7, 1e-9], vec![3.3, 2.0 / 3.0, -5.5]]).unwrap();
        let ups: Vec<(usize, Matrix)> = (0..7).map(|k| (k, m.clone())).collect();
        assert_eq!(aggregate(&ups, &[3, 1, 4, 1, 5, 9, 2]).unwrap(), m);
    }

    #[test]
    fn aggregation_errors() {
        assert!(matches!(aggregate(&[], &[1]), Err(Error::Aggregation(_))));
        assert!(matches!(
            aggregate(&[(0, scalar(1.0))], &[0]),
            Err(Error::Aggregation(_))
        ));
        assert!(aggregate(&[(0, scalar(1.0)), (1, Matrix::zeros(1, 2))], &[1, 1]).is_err());
    }

    #[test]
    fn full_participation_selects_everyone() {
        let cfg = FederationConfig {
            num_clients: 5,
            clients_per_round: Some(5),
            ..FederationConfig::default()
        };
        for t in 1..20 {
            assert_eq!(sample_clients(t, &cfg, &[1, 2, 3, 4, 5]).unwrap(), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn empty_clients_are_never_sampled() {
        let cfg = FederationConfig {
            num_clients: 4,
            clients_per_round: Some(2),
            ..FederationConfig::default()
        };
        for t in 1..200 {
            let s = sample_clients(t, &cfg, &[3, 0, 2, 5]).unwrap();
            assert_eq!(s.len(), 2);
            assert!(!s.contains(&1));
        }
        let too_many = FederationConfig {
            clients_per_round: Some(4),
            ..cfg
        };
        assert!(matches!(
            sample_clients(1, &too_many, &[3, 0, 2, 5]),
            Err(Error::Sampling { wanted: 4, available: 3 })
        ));
    }

    #[test]
    fn zero_epochs_or_zero_lr_leave_keys_alone() {
        let w = world(1);
        let model = init_cache(&w.synthetic_balanced).unwrap();
        for cfg in [
            FederationConfig {
                local_epochs: 0,
                ..FederationConfig::default()
            },
            FederationConfig {
                lr: 0.0,
                ..FederationConfig::default()
            },
        ] {
            let (w1, _) = client_update(0, &model, &w.text_head, &w.real_train, &cfg, 1).unwrap();
            assert_eq!(&w1, model.w1());
        }
    }

    #[test]
    fn single_sample_shard_is_one_sgd_step() {
        let w = world(2);
        let model = init_cache(&w.synthetic_balanced).unwrap();
        let shard = w.real_train.subset(&[5]);
        let cfg = FederationConfig {
            lr: 0.05,
            ..FederationConfig::default()
        };
        let (w1, trace) = client_update(3, &model, &w.text_head, &shard, &cfg, 1).unwrap();
        let (loss, g) =
            cache::loss_and_grad_w1(&model, &w.text_head, shard.features(), shard.labels()).unwrap();
        let oracle = cache::sgd_step(&model, &g, 0.05).unwrap();
        assert_eq!(&w1, oracle.w1());
        assert_eq!(trace, vec![loss]);
    }

    #[test]
    fn empty_shard_is_refused() {
        let w = world(2);
        let model = init_cache(&w.synthetic_balanced).unwrap();
        let empty = w.real_train.subset(&[]);
        assert!(matches!(
            client_update(7, &model, &w.text_head, &empty, &FederationConfig::default(), 1),
            Err(Error::EmptyShard(7))
        ));
    }

    #[test]
    fn prox_term_pulls_towards_global() {
        let w = world(3);
        let model = init_cache(&w.synthetic_balanced).unwrap();
        let base = FederationConfig {
            lr: 0.5,
            local_epochs: 5,
            ..FederationConfig::default()
        };
        let prox = FederationConfig {
            prox_mu: 0.1,
            ..base.clone()
        };
        let (plain, _) = client_update(0, &model, &w.text_head, &w.real_train, &base, 1).unwrap();
        let (held, _) = client_update(0, &model, &w.text_head, &w.real_train, &prox, 1).unwrap();
        let d_plain = plain.sub(model.w1()).unwrap().frobenius_norm();
        let d_held = held.sub(model.w1()).unwrap().frobenius_norm();
        assert!(d_held < d_plain, "{d_held} !< {d_plain}");
    }

    #[test]
    fn zero_rounds_reports_initial_accuracy() {
        let w = world(4);
        let p = partition(&w.real_train, &PartitionSpec::new(Scheme::Iid, 4, 0)).unwrap();
        let fed = Federation::new(
            init_cache(&w.synthetic_balanced).unwrap(),
            w.text_head.clone(),
            &w.real_train,
            w.real_test.clone(),
            &p,
        )
        .unwrap();
        let cfg = FederationConfig {
            num_clients: 4,
            rounds: 0,
            ..FederationConfig::default()
        };
        let s = fed.run(&cfg).unwrap();
        assert!(s.history.is_empty());
        let direct = cache::evaluate(&fed.initial, &w.text_head, &w.real_test).unwrap();
        assert_eq!(s.final_accuracy(), direct);
    }

    #[test]
    fn history_shape_and_determinism() {
        let w = world(5);
        let p = partition(&w.real_train, &PartitionSpec::new(Scheme::Dirichlet, 4, 9)).unwrap();
        let fed = Federation::new(
            init_cache(&w.synthetic_balanced).unwrap(),
            w.text_head.clone(),
            &w.real_train,
            w.real_test.clone(),
            &p,
        )
        .unwrap();
        let k = p.nonempty_clients().len().min(2);
        let cfg = FederationConfig {
            num_clients: 4,
            clients_per_round: Some(k),
            rounds: 6,
            lr: 0.2,
            seed: 17,
            ..FederationConfig::default()
        };
        let a = fed.run(&cfg).unwrap();
        let b = fed.run(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 6);
        for log in &a.history {
            assert_eq!(log.selected.len(), k);
            assert_eq!(log.params_uploaded, (k * 16 * 16) as u64);
        }
        assert_eq!(a.global_model.w2(), fed.initial.w2());
    }

    #[test]
    fn cost_formula() {
        let cfg = FederationConfig {
            clients_per_round: Some(10),
            num_clients: 10,
            ..FederationConfig::default()
        };
        let dims = CostDims {
            feature_dim: 1024,
            cache_size: 16_000,
            num_classes: 1000,
            samples_per_client: 16,
        };
        assert_eq!(cost_accounting(&cfg, &dims).params_per_round, 163_840_000);
        let double = FederationConfig {
            local_epochs: 2,
            ..cfg.clone()
        };
        assert_eq!(
            cost_accounting(&double, &dims).flops_per_round,
            2 * cost_accounting(&cfg, &dims).flops_per_round
        );
    }

    #[test]
    fn inverse_t_schedule() {
        let s = LrSchedule::InverseT { gamma: 4.0 };
        assert_eq!(s.rate(1.0, 1), 1.0);
        assert_eq!(s.rate(1.0, 5), 0.5);
        assert_eq!(LrSchedule::Constant.rate(0.3, 100), 0.3);
    }
}
