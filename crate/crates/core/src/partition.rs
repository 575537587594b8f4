//! Non-IID data partitioning across clients. Every mode keeps the
//! private label away from the honest-but-curious client and assigns each
//! sample to exactly one client.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Per-label round-robin over all clients; private-label samples go
    /// round-robin over the non-HBC clients only.
    General,
    /// Label scarcity: each client draws from a small fixed label subset
    /// (the private label is forced into non-HBC subsets and kept out of
    /// the HBC subset), with roughly equal sample counts per client.
    Distribution1,
    /// Quantity skew: per-label client shares drawn from a symmetric
    /// Dirichlet over the eligible clients.
    Distribution2,
}

impl PartitionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PartitionMode::General => "general",
            PartitionMode::Distribution1 => "distribution_1",
            PartitionMode::Distribution2 => "distribution_2",
        }
    }
}

/// Recipe for mapping a labeled dataset onto N clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub num_clients: usize,
    /// The class treated as private information.
    pub private_label: usize,
    /// Index of the honest-but-curious client, which never receives
    /// private-label samples.
    pub hbc_client: usize,
    /// Dirichlet concentration for `Distribution2`.
    pub dirichlet_alpha: f64,
    /// Label-subset size for non-HBC clients in `Distribution1`; the HBC
    /// client gets one fewer. Both are capped by the class count.
    pub labels_per_client: usize,
}

impl PartitionSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::TooFewClients {
                needed: 2,
                got: self.num_clients,
            });
        }
        if self.hbc_client >= self.num_clients {
            return Err(Error::ValidationError {
                field: "partition.hbc_client".into(),
                message: format!(
                    "client index {} out of range for {} clients",
                    self.hbc_client, self.num_clients
                ),
            });
        }
        if self.private_label >= num_classes {
            return Err(Error::ValidationError {
                field: "partition.private_label".into(),
                message: format!(
                    "label {} out of range for {num_classes} classes",
                    self.private_label
                ),
            });
        }
        if self.dirichlet_alpha <= 0.0 {
            return Err(Error::ValidationError {
                field: "partition.dirichlet_alpha".into(),
                message: format!("must be positive, got {}", self.dirichlet_alpha),
            });
        }
        if self.labels_per_client < 2 {
            return Err(Error::ValidationError {
                field: "partition.labels_per_client".into(),
                message: format!("must be at least 2, got {}", self.labels_per_client),
            });
        }
        Ok(())
    }
}

/// Split a dataset into one dataset per client according to the recipe.
/// Deterministic in (dataset order, spec, seed).
pub fn partition_data(dataset: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<Dataset>> {
    spec.validate(dataset.num_classes)?;
    let counts = dataset.label_counts();
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(class));
    }

    let stream = RngStream::new(seed).child(purpose::PARTITION);
    // Per-label sample indices, shuffled under a per-label child stream.
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_label[s.label].push(i);
    }
    for (label, idxs) in by_label.iter_mut().enumerate() {
        stream.child(label as u64).shuffle(idxs);
    }

    let assignment = match spec.mode {
        PartitionMode::General => assign_general(&by_label, spec),
        PartitionMode::Distribution1 => assign_label_scarcity(&by_label, spec, &stream),
        PartitionMode::Distribution2 => assign_dirichlet(&by_label, spec, &stream),
    };

    let mut per_client: Vec<Vec<crate::data::Sample>> = vec![Vec::new(); spec.num_clients];
    for (sample_idx, client) in assignment {
        per_client[client].push(dataset.samples[sample_idx].clone());
    }
    per_client
        .into_iter()
        .map(|samples| Dataset::new(samples, dataset.input_dim, dataset.num_classes))
        .collect()
}

fn eligible_clients(label: usize, spec: &PartitionSpec) -> Vec<usize> {
    (0..spec.num_clients)
        .filter(|&c| label != spec.private_label || c != spec.hbc_client)
        .collect()
}

fn assign_general(by_label: &[Vec<usize>], spec: &PartitionSpec) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (label, idxs) in by_label.iter().enumerate() {
        let eligible = eligible_clients(label, spec);
        for (k, &i) in idxs.iter().enumerate() {
            out.push((i, eligible[k % eligible.len()]));
        }
    }
    out
}

/// Draw the per-client label subsets for the scarcity mode, repairing
/// coverage so that every label has at least one holder.
fn scarcity_subsets(
    num_classes: usize,
    spec: &PartitionSpec,
    stream: &RngStream,
) -> Vec<Vec<usize>> {
    let non_private: Vec<usize> = (0..num_classes)
        .filter(|&l| l != spec.private_label)
        .collect();
    let per_client = spec.labels_per_client.min(num_classes);
    let hbc_count = (spec.labels_per_client - 1).min(num_classes - 1);

    let mut subsets: Vec<Vec<usize>> = Vec::with_capacity(spec.num_clients);
    for client in 0..spec.num_clients {
        let mut s = stream.child(0x51).child(client as u64);
        let subset = if client == spec.hbc_client {
            let picks = s.sample_indices(non_private.len(), hbc_count);
            picks.into_iter().map(|k| non_private[k]).collect()
        } else {
            let picks = s.sample_indices(non_private.len(), per_client - 1);
            let mut labels: Vec<usize> = picks.into_iter().map(|k| non_private[k]).collect();
            labels.push(spec.private_label);
            labels.sort_unstable();
            labels
        };
        subsets.push(subset);
    }

    // Coverage repair: swap an uncovered label into some client that holds a
    // label also held elsewhere. Deterministic and rarely triggered.
    let holders = |subsets: &[Vec<usize>], label: usize| -> usize {
        subsets.iter().filter(|s| s.contains(&label)).count()
    };
    let uncovered: Vec<usize> = (0..num_classes)
        .filter(|&l| holders(&subsets, l) == 0)
        .collect();
    let non_hbc: Vec<usize> = (0..spec.num_clients)
        .filter(|&c| c != spec.hbc_client)
        .collect();
    for (k, label) in uncovered.into_iter().enumerate() {
        let client = non_hbc[k % non_hbc.len()];
        let victim = subsets[client]
            .iter()
            .copied()
            .filter(|&l| l != spec.private_label && holders(&subsets, l) >= 2)
            .max_by_key(|&l| (holders(&subsets, l), l));
        match victim {
            Some(v) => {
                subsets[client].retain(|&l| l != v);
                subsets[client].push(label);
                subsets[client].sort_unstable();
            }
            None => {
                // No swappable slot; grow the subset rather than lose data.
                subsets[client].push(label);
                subsets[client].sort_unstable();
            }
        }
    }
    subsets
}

fn assign_label_scarcity(
    by_label: &[Vec<usize>],
    spec: &PartitionSpec,
    stream: &RngStream,
) -> Vec<(usize, usize)> {
    let subsets = scarcity_subsets(by_label.len(), spec, stream);
    let mut totals = vec![0usize; spec.num_clients];
    let mut out = Vec::new();
    for (label, idxs) in by_label.iter().enumerate() {
        let holders: Vec<usize> = (0..spec.num_clients)
            .filter(|&c| subsets[c].contains(&label))
            .filter(|&c| label != spec.private_label || c != spec.hbc_client)
            .collect();
        debug_assert!(!holders.is_empty());
        for &i in idxs {
            // Least-loaded eligible client keeps overall counts level.
            let &client = holders
                .iter()
                .min_by_key(|&&c| (totals[c], c))
                .expect("nonempty holders");
            totals[client] += 1;
            out.push((i, client));
        }
    }
    out
}

/// Marsaglia-Tsang gamma sampling over a deterministic stream; the alpha < 1
/// case is boosted through Gamma(alpha + 1).
fn sample_gamma(alpha: f64, stream: &mut RngStream) -> f64 {
    if alpha < 1.0 {
        let boost = stream.next_open_f64().powf(1.0 / alpha);
        return sample_gamma(alpha + 1.0, stream) * boost;
    }
    let d = alpha - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = stream.next_standard_normal();
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u = stream.next_open_f64();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn sample_dirichlet(alpha: f64, n: usize, stream: &mut RngStream) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..n).map(|_| sample_gamma(alpha, stream)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        // Extreme concentration underflow: collapse onto one component,
        // which is the alpha -> 0 limit anyway.
        let winner = stream.next_index(n);
        return (0..n)
            .map(|i| if i == winner { 1.0 } else { 0.0 })
            .collect();
    }
    for d in draws.iter_mut() {
        *d /= sum;
    }
    draws
}

/// Largest-remainder rounding of `total * share` so the counts sum to total.
fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = shares
        .iter()
        .map(|&s| (s * total as f64) as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = shares
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, s * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..total - assigned {
        counts[remainders[k].0] += 1;
    }
    counts
}

fn assign_dirichlet(
    by_label: &[Vec<usize>],
    spec: &PartitionSpec,
    stream: &RngStream,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (label, idxs) in by_label.iter().enumerate() {
        let eligible = eligible_clients(label, spec);
        let mut s = stream.child(0xD1).child(label as u64);
        let shares = sample_dirichlet(spec.dirichlet_alpha, eligible.len(), &mut s);
        let counts = apportion(&shares, idxs.len());
        let mut cursor = 0;
        for (slot, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                out.push((idxs[cursor], eligible[slot]));
                cursor += 1;
            }
        }
        debug_assert_eq!(cursor, idxs.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn spec(mode: PartitionMode, n: usize) -> PartitionSpec {
        PartitionSpec {
            mode,
            num_clients: n,
            private_label: 1,
            hbc_client: 0,
            dirichlet_alpha: 0.01,
            labels_per_client: 4,
        }
    }

    fn private_count(parts: &[Dataset], spec: &PartitionSpec) -> usize {
        parts[spec.hbc_client]
            .samples
            .iter()
            .filter(|s| s.label == spec.private_label)
            .count()
    }

    #[test]
    fn general_round_robin_is_even() {
        // 10 samples of one non-private label over 2 clients: 5 each.
        let ds = generate_synthetic(2, 10, 4, 1.0, 3).unwrap();
        let mut sp = spec(PartitionMode::General, 2);
        sp.private_label = 1;
        let parts = partition_data(&ds, &sp, 7).unwrap();
        let label0 = |d: &Dataset| d.samples.iter().filter(|s| s.label == 0).count();
        assert_eq!(label0(&parts[0]), 5);
        assert_eq!(label0(&parts[1]), 5);
        // private label only on the non-HBC client
        assert_eq!(private_count(&parts, &sp), 0);
        assert_eq!(parts[1].samples.iter().filter(|s| s.label == 1).count(), 10);
    }

    #[test]
    fn all_modes_conserve_samples_and_isolate_private_label() {
        let ds = generate_synthetic(5, 40, 4, 1.0, 9).unwrap();
        for mode in [
            PartitionMode::General,
            PartitionMode::Distribution1,
            PartitionMode::Distribution2,
        ] {
            for seed in 0..5u64 {
                let sp = spec(mode, 6);
                let parts = partition_data(&ds, &sp, seed).unwrap();
                let total: usize = parts.iter().map(Dataset::len).sum();
                assert_eq!(total, ds.len(), "{mode:?} seed {seed}");
                assert_eq!(private_count(&parts, &sp), 0, "{mode:?} seed {seed}");
                let mut label_totals = vec![0usize; 5];
                for p in &parts {
                    for (l, c) in p.label_counts().iter().enumerate() {
                        label_totals[l] += c;
                    }
                }
                assert_eq!(label_totals, ds.label_counts(), "{mode:?} seed {seed}");
            }
        }
    }

    #[test]
    fn scarcity_respects_label_subsets() {
        let ds = generate_synthetic(8, 30, 4, 1.0, 2).unwrap();
        let sp = spec(PartitionMode::Distribution1, 10);
        let parts = partition_data(&ds, &sp, 11).unwrap();
        // HBC holds at most labels_per_client - 1 distinct labels, others at
        // most labels_per_client (repair can add one more).
        let distinct = |d: &Dataset| d.label_counts().iter().filter(|&&c| c > 0).count();
        assert!(distinct(&parts[sp.hbc_client]) <= sp.labels_per_client);
        for (c, p) in parts.iter().enumerate() {
            assert!(!p.is_empty(), "client {c} got no data");
        }
        // Counts are roughly level.
        let sizes: Vec<usize> = parts.iter().map(Dataset::len).collect();
        let max = *sizes.iter().max().unwrap();
        let min = *sizes.iter().min().unwrap();
        assert!(max - min <= ds.len() / 10, "sizes {sizes:?}");
    }

    #[test]
    fn scarcity_handles_fewer_classes_than_subset_size() {
        // Three classes with the default subset size of four: the caps
        // reduce the subsets instead of failing.
        let ds = generate_synthetic(3, 30, 4, 1.0, 2).unwrap();
        let sp = spec(PartitionMode::Distribution1, 6);
        let parts = partition_data(&ds, &sp, 1).unwrap();
        assert_eq!(parts.iter().map(Dataset::len).sum::<usize>(), ds.len());
        assert_eq!(private_count(&parts, &sp), 0);
    }

    #[test]
    fn dirichlet_large_alpha_is_near_uniform() {
        let ds = generate_synthetic(4, 500, 4, 1.0, 4).unwrap();
        for seed in [1u64, 2, 3] {
            let mut sp = spec(PartitionMode::Distribution2, 5);
            sp.dirichlet_alpha = 1000.0;
            let parts = partition_data(&ds, &sp, seed).unwrap();
            // Non-private labels spread over all 5 clients within 20% of
            // uniform at alpha = 1000.
            for label in [0usize, 2, 3] {
                let n_label = 500.0;
                for p in &parts {
                    let c = p.label_counts()[label] as f64;
                    let uniform = n_label / 5.0;
                    assert!(
                        (c - uniform).abs() <= 0.2 * uniform,
                        "seed {seed} label {label}: count {c} vs uniform {uniform}"
                    );
                }
            }
        }
    }

    #[test]
    fn dirichlet_small_alpha_concentrates() {
        // At alpha = 0.01 a label lands almost entirely on one client about
        // 80% of the time; check the rate over 30 label draws.
        let ds = generate_synthetic(10, 100, 4, 1.0, 4).unwrap();
        let mut dominated = 0;
        for seed in [3u64, 4, 5] {
            let sp = spec(PartitionMode::Distribution2, 8);
            let parts = partition_data(&ds, &sp, seed).unwrap();
            for label in 0..10usize {
                let counts: Vec<usize> = parts.iter().map(|p| p.label_counts()[label]).collect();
                let max = *counts.iter().max().unwrap();
                if max as f64 >= 0.9 * 100.0 {
                    dominated += 1;
                }
            }
        }
        assert!(dominated >= 18, "only {dominated}/30 labels concentrated");
    }

    #[test]
    fn partition_is_deterministic() {
        let ds = generate_synthetic(4, 50, 4, 1.0, 6).unwrap();
        for mode in [
            PartitionMode::General,
            PartitionMode::Distribution1,
            PartitionMode::Distribution2,
        ] {
            let sp = spec(mode, 5);
            let a = partition_data(&ds, &sp, 42).unwrap();
            let b = partition_data(&ds, &sp, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn partition_rejects_bad_specs() {
        let ds = generate_synthetic(3, 10, 4, 1.0, 1).unwrap();
        let mut sp = spec(PartitionMode::General, 1);
        assert!(matches!(
            partition_data(&ds, &sp, 0),
            Err(Error::TooFewClients { .. })
        ));
        sp.num_clients = 4;
        sp.private_label = 9;
        assert!(matches!(
            partition_data(&ds, &sp, 0),
            Err(Error::ValidationError { .. })
        ));
    }

    #[test]
    fn partition_rejects_missing_class() {
        let mut ds = generate_synthetic(3, 10, 4, 1.0, 1).unwrap();
        ds.samples.retain(|s| s.label != 2);
        let sp = spec(PartitionMode::General, 4);
        assert!(matches!(
            partition_data(&ds, &sp, 0),
            Err(Error::MissingClass(2))
        ));
    }

    #[test]
    fn apportion_conserves_total() {
        let counts = apportion(&[0.301, 0.299, 0.4], 10);
        assert_eq!(counts.iter().sum::<usize>(), 10);
        let counts = apportion(&[1.0, 0.0, 0.0], 7);
        assert_eq!(counts, vec![7, 0, 0]);
    }
}
