//! Dual-imbalance stream construction.
//!
//! Two axes of skew are generated independently: per-class sample counts
//! follow an exponential long tail, and per-step class counts follow the
//! geometric schedule `s_t = rho^((t-1)/(T-1))`, permuted so that large steps
//! do not always come first. Class ids are then dealt to steps at random, so
//! head classes are not front-loaded into early steps.
//!
//! The data itself is a Gaussian-prototype classification problem: one
//! prototype per class, isotropic noise around it, and a class-balanced test
//! split regardless of the training tail.

use crate::error::{Error, Result};
use crate::rng::{rng_from, sub_seed, SeedDomain};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// One labeled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
}

/// One incremental step: its disjoint class set and the per-class training
/// sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSpec {
    /// 1-based position in the stream.
    pub step_index: usize,
    pub class_ids: Vec<usize>,
    pub train_counts: BTreeMap<usize, usize>,
}

/// The full ordered protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamProtocol {
    pub total_classes: usize,
    pub num_steps: usize,
    pub rho: f64,
    pub steps: Vec<StepSpec>,
    pub permutation_seed: u64,
}

impl StreamProtocol {
    /// Per-step class counts in stream order.
    pub fn step_sizes(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.class_ids.len()).collect()
    }

    /// One line per step: `step_index class_count class_ids...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&format!("{} {}", step.step_index, step.class_ids.len()));
            for c in &step.class_ids {
                out.push_str(&format!(" {c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Shape and sampling parameters of one synthetic stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub total_classes: usize,
    pub num_steps: usize,
    pub rho: f64,
    pub class_rho: f64,
    pub n_max: usize,
    pub test_per_class: usize,
    pub input_dim: usize,
    pub separation: f64,
    pub noise_scale: f64,
}

impl Default for StreamParams {
    fn default() -> Self {
        StreamParams {
            total_classes: 40,
            num_steps: 10,
            rho: 0.01,
            class_rho: 0.01,
            n_max: 100,
            test_per_class: 30,
            input_dim: 24,
            separation: 1.25,
            noise_scale: 1.0,
        }
    }
}

/// Gaussian-prototype dataset driving the desk-scale runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub input_dim: usize,
    pub prototypes: Vec<Vec<f64>>,
    pub noise_scale: f64,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

impl SyntheticDataset {
    /// Training samples whose labels belong to `classes`.
    pub fn train_subset(&self, classes: &[usize]) -> Vec<Sample> {
        self.train
            .iter()
            .filter(|s| classes.contains(&s.label))
            .cloned()
            .collect()
    }

    /// Test samples whose labels belong to `classes`.
    pub fn test_subset(&self, classes: &[usize]) -> Vec<Sample> {
        self.test
            .iter()
            .filter(|s| classes.contains(&s.label))
            .cloned()
            .collect()
    }
}

/// Geometric step proportions `s_t = rho^((t-1)/(T-1))`; a single step gets
/// proportion 1.
pub fn step_proportions(rho: f64, t_steps: usize) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParam {
            name: "rho",
            value: rho,
        });
    }
    if t_steps == 0 {
        return Err(Error::InvalidParam {
            name: "t_steps",
            value: 0.0,
        });
    }
    if t_steps == 1 {
        return Ok(vec![1.0]);
    }
    let denom = (t_steps - 1) as f64;
    Ok((0..t_steps)
        .map(|t| rho.powf(t as f64 / denom))
        .collect())
}

/// Largest-remainder apportionment of `total_classes` over the proportions,
/// with a floor of one class per step. The floor is applied first; positive
/// remainders then go to the largest fractional parts (ties to the earlier
/// step), and any floor-induced excess is taken back from the smallest
/// fractional parts among steps still above the floor (ties to the later
/// step). Counts come out nonincreasing for nonincreasing proportions.
pub fn allocate_classes(proportions: &[f64], total_classes: usize) -> Result<Vec<usize>> {
    let t = proportions.len();
    if t == 0 {
        return Err(Error::EmptyInput {
            what: "proportions",
        });
    }
    if total_classes < t {
        return Err(Error::InsufficientClasses {
            classes: total_classes,
            steps: t,
        });
    }
    let sum: f64 = proportions.iter().sum();
    let quotas: Vec<f64> = proportions
        .iter()
        .map(|p| total_classes as f64 * p / sum)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(1)).collect();
    let fracs: Vec<f64> = quotas.iter().map(|q| q - q.floor()).collect();

    let mut assigned: isize = counts.iter().sum::<usize>() as isize;
    let target = total_classes as isize;

    while assigned < target {
        // Boosted steps (count above quota floor) sit out of the bonus round.
        let mut pick: Option<usize> = None;
        for i in 0..t {
            if counts[i] != quotas[i].floor() as usize {
                continue;
            }
            match pick {
                None => pick = Some(i),
                Some(j) if fracs[i] > fracs[j] => pick = Some(i),
                _ => {}
            }
        }
        let i = pick.expect("bonus candidate must exist while under target");
        counts[i] += 1;
        assigned += 1;
    }
    while assigned > target {
        let mut pick: Option<usize> = None;
        for i in 0..t {
            if counts[i] < 2 {
                continue;
            }
            match pick {
                None => pick = Some(i),
                Some(j) if fracs[i] <= fracs[j] => pick = Some(i),
                _ => {}
            }
        }
        let i = pick.expect("reduction candidate must exist while over target");
        counts[i] -= 1;
        assigned -= 1;
    }
    Ok(counts)
}

/// Seeded Fisher-Yates permutation of the step sizes.
pub fn permute_steps(counts: &[usize], seed: u64) -> Vec<usize> {
    let mut out = counts.to_vec();
    let mut rng = rng_from(seed);
    out.shuffle(&mut rng);
    out
}

/// Exponential long-tail profile: class of rank `r` receives
/// `max(1, round(n_max * class_rho^(r/(C-1))))` training samples.
pub fn longtail_counts(num_classes: usize, n_max: usize, class_rho: f64) -> Result<Vec<usize>> {
    if !(class_rho > 0.0 && class_rho <= 1.0) {
        return Err(Error::InvalidParam {
            name: "class_rho",
            value: class_rho,
        });
    }
    if n_max == 0 {
        return Err(Error::InvalidParam {
            name: "n_max",
            value: 0.0,
        });
    }
    if num_classes == 0 {
        return Err(Error::EmptyInput { what: "classes" });
    }
    if num_classes == 1 {
        return Ok(vec![n_max]);
    }
    let denom = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|r| {
            let raw = n_max as f64 * class_rho.powf(r as f64 / denom);
            (raw.round() as usize).max(1)
        })
        .collect())
}

/// Builds the full protocol and dataset from one base seed.
///
/// Sub-seeds are derived per component, so the protocol layout, the class
/// assignment, the prototypes, and the sample noise are independent streams.
pub fn build_stream(params: &StreamParams, seed: u64) -> Result<(StreamProtocol, SyntheticDataset)> {
    let c = params.total_classes;
    let t = params.num_steps;
    let proportions = step_proportions(params.rho, t)?;
    let ordered = allocate_classes(&proportions, c)?;
    let permutation_seed = sub_seed(seed, SeedDomain::StepPermutation, 0);
    let sizes = permute_steps(&ordered, permutation_seed);

    // Class id k keeps rank k in the long tail; the random deal below decides
    // which step sees it.
    let counts = longtail_counts(c, params.n_max, params.class_rho)?;
    let mut ids: Vec<usize> = (0..c).collect();
    let mut assign_rng = rng_from(sub_seed(seed, SeedDomain::ClassAssignment, 0));
    ids.shuffle(&mut assign_rng);

    let mut steps = Vec::with_capacity(t);
    let mut cursor = 0;
    for (i, size) in sizes.iter().enumerate() {
        let class_ids: Vec<usize> = ids[cursor..cursor + size].to_vec();
        cursor += size;
        let train_counts: BTreeMap<usize, usize> =
            class_ids.iter().map(|c| (*c, counts[*c])).collect();
        steps.push(StepSpec {
            step_index: i + 1,
            class_ids,
            train_counts,
        });
    }
    let protocol = StreamProtocol {
        total_classes: c,
        num_steps: t,
        rho: params.rho,
        steps,
        permutation_seed,
    };

    let mut proto_rng = rng_from(sub_seed(seed, SeedDomain::Prototypes, 0));
    let prototypes: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            (0..params.input_dim)
                .map(|_| proto_rng.sample::<f64, _>(StandardNormal) * params.separation)
                .collect()
        })
        .collect();

    let mut noise_rng = rng_from(sub_seed(seed, SeedDomain::DataNoise, 0));
    let draw = |label: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Sample {
        let input = prototypes[label]
            .iter()
            .map(|p| p + rng.sample::<f64, _>(StandardNormal) * params.noise_scale)
            .collect();
        Sample { input, label }
    };
    let mut train = Vec::new();
    for class in 0..c {
        for _ in 0..counts[class] {
            train.push(draw(class, &mut noise_rng));
        }
    }
    let mut test = Vec::new();
    for class in 0..c {
        for _ in 0..params.test_per_class {
            test.push(draw(class, &mut noise_rng));
        }
    }

    let dataset = SyntheticDataset {
        input_dim: params.input_dim,
        prototypes,
        noise_scale: params.noise_scale,
        train,
        test,
        seed,
    };
    Ok((protocol, dataset))
}
