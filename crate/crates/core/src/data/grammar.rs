use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, BOS, EOS};
use super::SceneExample;
use crate::error::{Error, Result};

/// Dimensions and word lists of the synthetic scene task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarSpec {
    pub nouns: Vec<String>,
    pub adjectives: Vec<String>,
    pub verbs: Vec<String>,
    pub region_dim: usize,
    pub tag_dim: usize,
    pub k_max: usize,
    /// Standard deviation of the isotropic noise added to each prototype.
    pub noise: f64,
    pub prototype_seed: u64,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect();
        GrammarSpec {
            nouns: words(&["dog", "cat", "horse", "bird", "man", "woman", "car", "boat"]),
            adjectives: words(&["red", "small", "big", "white"]),
            verbs: words(&["watches", "follows", "touches"]),
            region_dim: 32,
            tag_dim: 16,
            k_max: 6,
            noise: 0.1,
            prototype_seed: 0,
        }
    }
}

/// Object label of one region: indices into the noun and adjective lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectLabel {
    pub noun: usize,
    pub adjective: usize,
}

/// Generator of scenes whose captions are recoverable from their features.
///
/// Every (noun, adjective) pair owns a prototype region vector. A scene
/// holds 1..=k_max objects, each emitted as prototype plus Gaussian noise.
/// The caption describes the first object acting on the second (or on
/// itself when alone), and the verb is a fixed function of the two nouns.
/// Tag slots are laid out as `[nouns.., adjectives.., spare..]`.
#[derive(Clone, Debug)]
pub struct SyntheticGrammar {
    spec: GrammarSpec,
    prototypes: Vec<Vec<f64>>,
    vocab: Vocabulary,
}

impl SyntheticGrammar {
    pub fn new(spec: GrammarSpec) -> Result<Self> {
        if spec.nouns.is_empty() || spec.adjectives.is_empty() || spec.verbs.is_empty() {
            return Err(Error::Config("grammar needs at least one noun, adjective and verb".into()));
        }
        if spec.region_dim == 0 || spec.k_max == 0 {
            return Err(Error::Config("region_dim and k_max must be positive".into()));
        }
        if spec.tag_dim < spec.nouns.len() + spec.adjectives.len() {
            return Err(Error::Config(format!(
                "tag_dim {} cannot hold {} noun and {} adjective tags",
                spec.tag_dim,
                spec.nouns.len(),
                spec.adjectives.len()
            )));
        }
        if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", spec.noise)));
        }

        let pairs = spec.nouns.len() * spec.adjectives.len();
        let min_sep = (4.0 * spec.noise).max(f64::EPSILON);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.prototype_seed);
        let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(pairs);
        let mut attempts = 0;
        while prototypes.len() < pairs {
            let candidate: Vec<f64> = (0..spec.region_dim).map(|_| rng.sample(StandardNormal)).collect();
            if prototypes.iter().all(|p| l2(p, &candidate) >= min_sep) {
                prototypes.push(candidate);
            } else {
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::Config(format!(
                        "cannot place {pairs} prototypes {min_sep} apart in {} dims",
                        spec.region_dim
                    )));
                }
            }
        }

        let words: Vec<&str> = std::iter::once("a")
            .chain(spec.nouns.iter().map(String::as_str))
            .chain(spec.adjectives.iter().map(String::as_str))
            .chain(spec.verbs.iter().map(String::as_str))
            .collect();
        let vocab = Vocabulary::new(&words);
        Ok(SyntheticGrammar {
            spec,
            prototypes,
            vocab,
        })
    }

    pub fn spec(&self) -> &GrammarSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn prototype(&self, label: ObjectLabel) -> &[f64] {
        &self.prototypes[label.noun * self.spec.adjectives.len() + label.adjective]
    }

    /// All prototypes with their labels, in (noun, adjective) order.
    pub fn prototypes(&self) -> impl Iterator<Item = (ObjectLabel, &[f64])> {
        let n_adj = self.spec.adjectives.len();
        self.prototypes.iter().enumerate().map(move |(i, p)| {
            (
                ObjectLabel {
                    noun: i / n_adj,
                    adjective: i % n_adj,
                },
                p.as_slice(),
            )
        })
    }

    /// Verb index relating a subject noun to an object noun.
    pub fn verb_for(&self, subject: usize, object: usize) -> usize {
        (subject + object) % self.spec.verbs.len()
    }

    /// Token ids of "a <adj> <noun> <verb> a <adj> <noun>" wrapped in BOS/EOS.
    pub fn caption(&self, subject: ObjectLabel, object: ObjectLabel) -> Vec<usize> {
        let s = &self.spec;
        let verb = &s.verbs[self.verb_for(subject.noun, object.noun)];
        let v = &self.vocab;
        vec![
            BOS,
            v.id("a"),
            v.id(&s.adjectives[subject.adjective]),
            v.id(&s.nouns[subject.noun]),
            v.id(verb),
            v.id("a"),
            v.id(&s.adjectives[object.adjective]),
            v.id(&s.nouns[object.noun]),
            EOS,
        ]
    }

    /// Draws one scene along with the ground-truth label of every region.
    pub fn sample_scene(&self, id: String, rng: &mut impl Rng) -> (SceneExample, Vec<ObjectLabel>) {
        let s = &self.spec;
        let k = rng.random_range(1..=s.k_max);
        let labels: Vec<ObjectLabel> = (0..k)
            .map(|_| ObjectLabel {
                noun: rng.random_range(0..s.nouns.len()),
                adjective: rng.random_range(0..s.adjectives.len()),
            })
            .collect();
        let regions = labels
            .iter()
            .map(|&l| {
                self.prototype(l)
                    .iter()
                    .map(|&p| {
                        let z: f64 = rng.sample(StandardNormal);
                        p + s.noise * z
                    })
                    .collect()
            })
            .collect();

        let mut present = vec![false; s.tag_dim];
        for l in &labels {
            present[l.noun] = true;
            present[s.nouns.len() + l.adjective] = true;
        }
        let tags = present
            .iter()
            .map(|&on| if on { rng.random_range(0.7..=1.0) } else { rng.random_range(0.0..=0.1) })
            .collect();

        let caption = self.caption(labels[0], *labels.get(1).unwrap_or(&labels[0]));
        let scene = SceneExample {
            id,
            regions,
            tags,
            captions: vec![caption],
        };
        (scene, labels)
    }

    /// Like [`generate_dataset`] but also returns the region labels.
    pub fn generate_labeled(&self, n: usize, seed: u64) -> Result<Vec<(SceneExample, Vec<ObjectLabel>)>> {
        if n == 0 {
            return Err(Error::contract("dataset size must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|i| self.sample_scene(format!("scene{i:05}"), &mut rng)).collect())
    }
}

/// Deterministic synthetic dataset of `n` scenes.
pub fn generate_dataset(grammar: &SyntheticGrammar, n: usize, seed: u64) -> Result<Vec<SceneExample>> {
    Ok(grammar.generate_labeled(n, seed)?.into_iter().map(|(s, _)| s).collect())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
