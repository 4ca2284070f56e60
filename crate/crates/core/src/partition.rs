//! Client splits of a dataset's sample indices.
//!
//! - `iid`: each class's samples are dealt round-robin, so per-client
//!   per-class counts differ by at most one. Dealing starts at the highest
//!   client id: 16 samples over 10 clients leave clients 0-3 with one sample
//!   and clients 4-9 with two.
//! - `dir`: per class, client proportions are drawn from `Dir(alpha)` and
//!   every sample of the class is assigned by a categorical draw.
//! - `pat`: classes are cut into contiguous groups (the first
//!   `classes % clients` clients get one extra class) and each client holds
//!   every sample of its group.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureDataset;
use crate::rng::{self, tag};

pub const DEFAULT_DIRICHLET_ALPHA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "iid")]
    Iid,
    #[serde(rename = "dir")]
    Dirichlet,
    #[serde(rename = "pat")]
    Pathological,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Iid, Scheme::Dirichlet, Scheme::Pathological];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Iid => "iid",
            Scheme::Dirichlet => "dir",
            Scheme::Pathological => "pat",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Scheme::Iid),
            "dir" | "dirichlet" => Ok(Scheme::Dirichlet),
            "pat" | "pathological" => Ok(Scheme::Pathological),
            other => Err(Error::Invalid(format!(
                "unknown partition scheme {other:?} (expected iid, dir or pat)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: Scheme,
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(scheme: Scheme, num_clients: usize, seed: u64) -> Self {
        PartitionSpec {
            scheme,
            num_clients,
            dirichlet_alpha: DEFAULT_DIRICHLET_ALPHA,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Invalid("num_clients must be at least 1".into()));
        }
        if !(self.dirichlet_alpha.is_finite() && self.dirichlet_alpha > 0.0) {
            return Err(Error::Invalid(format!(
                "dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            )));
        }
        Ok(())
    }
}

/// Disjoint shards covering every sample index; shard `k` is sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    /// Checks the disjoint-cover invariant against a dataset of `n` samples.
    pub fn from_shards(mut shards: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (k, shard) in shards.iter_mut().enumerate() {
            shard.sort_unstable();
            for &i in shard.iter() {
                if i >= n {
                    return Err(Error::Invalid(format!("client {k}: index {i} >= {n}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Invalid(format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("index {missing} is not assigned")));
        }
        Ok(Partition { shards })
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    /// Per-client sample counts `n_k`.
    pub fn counts(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    pub fn nonempty_clients(&self) -> Vec<usize> {
        (0..self.shards.len())
            .filter(|&k| !self.shards[k].is_empty())
            .collect()
    }

    /// `client_id: idx,idx,...`, one line per client.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, shard) in self.shards.iter().enumerate() {
            let idx: Vec<String> = shard.iter().map(usize::to_string).collect();
            s.push_str(&format!("{k}: {}\n", idx.join(",")));
        }
        s
    }

    pub fn from_text(text: &str, n: usize) -> Result<Self> {
        let mut shards = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Invalid(format!("partition line {}: {m}", line_no + 1));
            let (id, rest) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
            let id: usize = id.trim().parse().map_err(|_| bad("bad client id"))?;
            if id != shards.len() {
                return Err(bad("client ids must be consecutive from 0"));
            }
            let rest = rest.trim();
            let shard = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| bad("bad index")))
                    .collect::<Result<Vec<_>>>()?
            };
            shards.push(shard);
        }
        Partition::from_shards(shards, n)
    }
}

/// JSON sidecar written next to the text form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSidecar {
    pub scheme: Scheme,
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub seed: u64,
    pub n_k: Vec<usize>,
    pub n: usize,
}

impl PartitionSidecar {
    pub fn new(spec: &PartitionSpec, p: &Partition) -> Self {
        PartitionSidecar {
            scheme: spec.scheme,
            num_clients: spec.num_clients,
            dirichlet_alpha: spec.dirichlet_alpha,
            seed: spec.seed,
            n_k: p.counts(),
            n: p.total(),
        }
    }
}

pub fn partition(dataset: &FeatureDataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Degenerate("cannot partition an empty dataset".into()));
    }
    let clients = spec.num_clients;
    let classes = dataset.num_classes();
    let mut owner = vec![0usize; dataset.len()];

    match spec.scheme {
        Scheme::Iid => {
            let mut dealt = vec![0usize; classes];
            for (i, &y) in dataset.labels().iter().enumerate() {
                owner[i] = clients - 1 - dealt[y] % clients;
                dealt[y] += 1;
            }
        }
        Scheme::Pathological => {
            if clients > classes {
                return Err(Error::Infeasible(format!(
                    "{clients} clients cannot hold disjoint classes out of {classes}"
                )));
            }
            let group = class_groups(classes, clients);
            for (i, &y) in dataset.labels().iter().enumerate() {
                owner[i] = group[y];
            }
        }
        Scheme::Dirichlet => {
            let mut r = rng::stream(spec.seed, &[tag::PARTITION]);
            let gamma = Gamma::new(spec.dirichlet_alpha, 1.0)
                .map_err(|e| Error::Invalid(format!("dirichlet_alpha: {e}")))?;
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &y) in dataset.labels().iter().enumerate() {
                by_class[y].push(i);
            }
            for members in &by_class {
                let weights = dirichlet_draw(&gamma, clients, &mut r);
                let pick = WeightedIndex::new(&weights)
                    .map_err(|e| Error::Invalid(format!("dirichlet weights: {e}")))?;
                for &i in members {
                    owner[i] = pick.sample(&mut r);
                }
            }
        }
    }

    let mut shards = vec![Vec::new(); clients];
    for (i, &k) in owner.iter().enumerate() {
        shards[k].push(i);
    }
    Ok(Partition { shards })
}

/// Client owning each class under the pathological split.
fn class_groups(classes: usize, clients: usize) -> Vec<usize> {
    let base = classes / clients;
    let extra = classes % clients;
    let mut group = Vec::with_capacity(classes);
    for k in 0..clients {
        let size = base + usize::from(k < extra);
        group.extend(std::iter::repeat(k).take(size));
    }
    group
}

fn dirichlet_draw(gamma: &Gamma<f64>, n: usize, r: &mut impl Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(r)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        // every gamma draw underflowed: the alpha -> 0 limit puts all mass on one client
        let mut w = vec![0.0; n];
        w[r.random_range(0..n)] = 1.0;
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    /// `histograms[k][c]`: samples of class `c` on client `k`.
    pub histograms: Vec<Vec<usize>>,
    /// Earth mover's distance between each client's class distribution and
    /// the global one. With unit ground distance between distinct classes
    /// this is the total-variation distance. `None` for empty clients.
    pub emd: Vec<Option<f64>>,
}

impl HeterogeneityReport {
    pub fn max_emd(&self) -> f64 {
        self.emd.iter().flatten().copied().fold(0.0, f64::max)
    }
}

pub fn heterogeneity_report(p: &Partition, dataset: &FeatureDataset) -> HeterogeneityReport {
    let classes = dataset.num_classes();
    let global = dataset.class_counts();
    let n = dataset.len() as f64;
    let histograms: Vec<Vec<usize>> = p
        .shards()
        .iter()
        .map(|shard| {
            let mut h = vec![0; classes];
            for &i in shard {
                h[dataset.labels()[i]] += 1;
            }
            h
        })
        .collect();
    let emd = histograms
        .iter()
        .map(|h| {
            let nk: usize = h.iter().sum();
            (nk > 0).then(|| {
                0.5 * h
                    .iter()
                    .zip(&global)
                    .map(|(&a, &g)| (a as f64 / nk as f64 - g as f64 / n).abs())
                    .sum::<f64>()
            })
        })
        .collect();
    HeterogeneityReport { histograms, emd }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SourceTag;
    use crate::numerics::Matrix;

    pub(crate) fn labelled(classes: usize, per_class: usize) -> FeatureDataset {
        let n = classes * per_class;
        let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();
        let features = Matrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { 0.0 });
        FeatureDataset::new(features, labels, classes, SourceTag::Synthetic).unwrap()
    }

    #[test]
    fn iid_sixteen_over_ten() {
        let ds = labelled(10, 16);
        let p = partition(&ds, &PartitionSpec::new(Scheme::Iid, 10, 0)).unwrap();
        let rep = heterogeneity_report(&p, &ds);
        for (k, h) in rep.histograms.iter().enumerate() {
            let want = if k < 4 { 1 } else { 2 };
            assert!(h.iter().all(|&c| c == want), "client {k}: {h:?}");
        }
        assert_eq!(p.counts(), vec![10, 10, 10, 10, 20, 20, 20, 20, 20, 20]);
    }

    #[test]
    fn pathological_hundred_over_ten() {
        let ds = labelled(100, 2);
        let p = partition(&ds, &PartitionSpec::new(Scheme::Pathological, 10, 0)).unwrap();
        let rep = heterogeneity_report(&p, &ds);
        for (k, h) in rep.histograms.iter().enumerate() {
            let held: Vec<usize> = (0..100).filter(|&c| h[c] > 0).collect();
            assert_eq!(held, (10 * k..10 * k + 10).collect::<Vec<_>>());
            assert!(held.iter().all(|&c| h[c] == 2));
        }
    }

    #[test]
    fn pathological_remainder_goes_to_low_ids() {
        assert_eq!(class_groups(7, 3), vec![0, 0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn pathological_infeasible() {
        let ds = labelled(5, 3);
        assert!(matches!(
            partition(&ds, &PartitionSpec::new(Scheme::Pathological, 10, 0)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = labelled(4, 5);
        for scheme in Scheme::ALL {
            let p = partition(&ds, &PartitionSpec::new(scheme, 1, 3)).unwrap();
            assert_eq!(p.shard(0), (0..20).collect::<Vec<_>>().as_slice());
            let rep = heterogeneity_report(&p, &ds);
            assert_eq!(rep.emd, vec![Some(0.0)]);
        }
    }

    #[test]
    fn dirichlet_is_seeded() {
        let ds = labelled(10, 16);
        let spec = PartitionSpec::new(Scheme::Dirichlet, 10, 42);
        assert_eq!(partition(&ds, &spec).unwrap(), partition(&ds, &spec).unwrap());
        let other = PartitionSpec { seed: 43, ..spec };
        assert_ne!(partition(&ds, &spec).unwrap(), partition(&ds, &other).unwrap());
    }

    #[test]
    fn text_form_round_trips() {
        let ds = labelled(6, 5);
        let p = partition(&ds, &PartitionSpec::new(Scheme::Dirichlet, 4, 7)).unwrap();
        assert_eq!(Partition::from_text(&p.to_text(), 30).unwrap(), p);
        assert!(Partition::from_text("0: 1,2\n", 3).is_err());
    }

    #[test]
    fn invalid_specs() {
        let ds = labelled(2, 2);
        assert!(partition(&ds, &PartitionSpec::new(Scheme::Iid, 0, 0)).is_err());
        let mut s = PartitionSpec::new(Scheme::Dirichlet, 2, 0);
        s.dirichlet_alpha = 0.0;
        assert!(partition(&ds, &s).is_err());
        assert!("nope".parse::<Scheme>().is_err());
        assert_eq!("pat".parse::<Scheme>().unwrap(), Scheme::Pathological);
    }
}
