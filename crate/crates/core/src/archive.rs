//! On-disk solutions: a JSON manifest plus one little-endian `f64` blob per
//! trained step, each checked against its SHA-256 digest on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{Dims, NetworkParams};
use crate::solver::{Problem, StepDiagnostics, TimeSteppedSolution};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// Flat parameter order inside every blob.
pub const PARAMETER_ORDER: &str = "input W [width x inputs] row-major, input b [width]; \
    per layer and gate (z, g, r, h): U [width x inputs], W [width x width], b [width]; \
    output W [width], output b";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub step: usize,
    pub file: String,
    pub sha256: String,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    /// The resolved problem; enough to retrain identically.
    pub config: Problem,
    pub inputs: usize,
    pub width: usize,
    pub layers: usize,
    pub parameter_count: usize,
    pub parameter_order: String,
    pub steps: Vec<StepEntry>,
    pub complete: bool,
}

/// A run directory, opened for reading or appending.
#[derive(Debug)]
pub struct SolutionArchive {
    dir: PathBuf,
    manifest: Manifest,
}

fn blob_name(step: usize) -> String {
    format!("step_{step:05}.f64le")
}

fn encode(params: &NetworkParams) -> Vec<u8> {
    params.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file so a crash never leaves a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl SolutionArchive {
    /// Opens `dir` for training `problem`: resumes an archive of the same
    /// problem or starts a new one. An archive of another problem is refused.
    pub fn create(dir: &Path, problem: &Problem) -> Result<Self> {
        if dir.join(MANIFEST).exists() {
            let archive = Self::open(dir)?;
            if archive.manifest.config != *problem {
                return Err(Error::Config(format!(
                    "{} holds a run of a different configuration",
                    dir.display()
                )));
            }
            return Ok(archive);
        }
        let dims = problem.dims()?;
        fs::create_dir_all(dir)?;
        let archive = Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                config: problem.clone(),
                inputs: dims.inputs,
                width: dims.width,
                layers: dims.layers,
                parameter_count: dims.param_count(),
                parameter_order: PARAMETER_ORDER.to_string(),
                steps: Vec::new(),
                complete: false,
            },
        };
        archive.write_manifest()?;
        Ok(archive)
    }

    /// Opens an existing archive, checking the format version and the
    /// manifest's internal consistency.
    pub fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))
            .map_err(|e| Error::Integrity(format!("cannot read manifest in {}: {e}", dir.display())))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("malformed manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let dims = manifest.config.dims()?;
        if (dims.inputs, dims.width, dims.layers, dims.param_count())
            != (manifest.inputs, manifest.width, manifest.layers, manifest.parameter_count)
        {
            return Err(Error::Integrity("manifest shape disagrees with its config".into()));
        }
        if manifest.steps.iter().enumerate().any(|(i, s)| s.step != i + 1) {
            return Err(Error::Integrity("manifest steps are not consecutive from 1".into()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dims(&self) -> Dims {
        Dims {
            inputs: self.manifest.inputs,
            width: self.manifest.width,
            layers: self.manifest.layers,
        }
    }

    fn write_manifest(&self) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&self.dir.join(MANIFEST), &json)
    }

    /// Stores the next step. The blob lands before the manifest names it.
    pub fn append_step(&mut self, step: usize, params: &NetworkParams, diagnostics: &StepDiagnostics) -> Result<()> {
        let expected = self.manifest.steps.len() + 1;
        if step != expected || step > self.manifest.config.solver.time_steps {
            return Err(Error::Config(format!("expected step {expected}, got {step}")));
        }
        if params.dims != self.dims() {
            return Err(Error::Dimension {
                expected: self.manifest.parameter_count,
                got: params.len(),
            });
        }
        let bytes = encode(params);
        let file = blob_name(step);
        write_atomic(&self.dir.join(&file), &bytes)?;
        self.manifest.steps.push(StepEntry {
            step,
            file,
            sha256: digest(&bytes),
            diagnostics: diagnostics.clone(),
        });
        self.manifest.complete = self.manifest.steps.len() == self.manifest.config.solver.time_steps;
        self.write_manifest()
    }

    fn load_step(&self, entry: &StepEntry) -> Result<NetworkParams> {
        let bytes = fs::read(self.dir.join(&entry.file))
            .map_err(|e| Error::Integrity(format!("step {}: cannot read {}: {e}", entry.step, entry.file)))?;
        if digest(&bytes) != entry.sha256 {
            return Err(Error::Integrity(format!("step {}: digest mismatch in {}", entry.step, entry.file)));
        }
        if bytes.len() != 8 * self.manifest.parameter_count {
            return Err(Error::Integrity(format!("step {}: blob has {} bytes", entry.step, bytes.len())));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        NetworkParams::from_vec(self.dims(), data)
    }

    /// All stored steps, verified; the solution may be incomplete.
    pub fn load(&self) -> Result<TimeSteppedSolution> {
        let steps = self.manifest.steps.iter().map(|e| self.load_step(e)).collect::<Result<Vec<_>>>()?;
        Ok(TimeSteppedSolution {
            problem: self.manifest.config.clone(),
            steps,
            diagnostics: self.manifest.steps.iter().map(|e| e.diagnostics.clone()).collect(),
        })
    }

    /// Like [`load`](Self::load) but refuses an incomplete run.
    pub fn load_complete(&self) -> Result<TimeSteppedSolution> {
        let sol = self.load()?;
        if !sol.is_complete() {
            return Err(Error::IncompleteSolution(sol.missing_steps()));
        }
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BlackScholesSpec, ModelSpec};
    use crate::network::forward;
    use crate::solver::{resume, solve, NetworkConfig, SolverConfig};
    use proptest::prelude::*;

    fn problem(steps: usize) -> Problem {
        let mut cfg = SolverConfig::new(steps, 1.0);
        cfg.sampling_stages = 4;
        let mut p = Problem::new(ModelSpec::BlackScholes(BlackScholesSpec { r: 0.05, sigma: 0.25 }), cfg);
        p.network = NetworkConfig {
            layers: 2,
            width: 5,
            ..NetworkConfig::default()
        };
        p.sampling.samples_per_dim = 16;
        p
    }

    fn save(dir: &Path, sol: &TimeSteppedSolution) -> SolutionArchive {
        let mut a = SolutionArchive::create(dir, &sol.problem).unwrap();
        for (k, (s, d)) in sol.steps.iter().zip(&sol.diagnostics).enumerate() {
            a.append_step(k + 1, s, d).unwrap();
        }
        a
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let sol = solve(&problem(3), &mut ()).unwrap();
        let a = save(dir.path(), &sol);
        assert!(a.manifest().complete);
        let back = SolutionArchive::open(dir.path()).unwrap().load_complete().unwrap();
        assert_eq!(back, sol);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn loaded_networks_evaluate_identically(x in 0.0f64..4.0, seed in 0u64..1000) {
            let dir = tempfile::tempdir().unwrap();
            let p = problem(1);
            let net = NetworkParams::init(p.dims().unwrap(), seed);
            let diag = StepDiagnostics { step: 1, stages: 0, initial_loss: 0.0, final_loss: 0.0, skipped_stages: 0, seconds: 0.0 };
            SolutionArchive::create(dir.path(), &p).unwrap().append_step(1, &net, &diag).unwrap();
            let back = SolutionArchive::open(dir.path()).unwrap().load().unwrap();
            let ctx = p.context(1);
            prop_assert_eq!(forward(&back.steps[0], &ctx, &[x]).unwrap().to_bits(), forward(&net, &ctx, &[x]).unwrap().to_bits());
        }
    }

    #[test]
    fn corrupted_blob_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &solve(&problem(2), &mut ()).unwrap());
        let blob = dir.path().join(blob_name(2));
        let mut bytes = fs::read(&blob).unwrap();
        bytes[17] ^= 1;
        fs::write(&blob, bytes).unwrap();
        let err = SolutionArchive::open(dir.path()).unwrap().load().unwrap_err();
        assert!(matches!(err, Error::Integrity(ref m) if m.contains("step 2")), "{err}");
    }

    #[test]
    fn wrong_format_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &solve(&problem(1), &mut ()).unwrap());
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(SolutionArchive::open(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn resume_continues_at_first_missing_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = problem(3);
        let full = solve(&p, &mut ()).unwrap();
        let mut half = full.clone();
        half.steps.truncate(1);
        half.diagnostics.truncate(1);
        save(dir.path(), &half);

        let mut archive = SolutionArchive::create(dir.path(), &p).unwrap();
        let partial = archive.load_complete();
        assert!(matches!(partial, Err(Error::IncompleteSolution(ref m)) if *m == vec![2, 3]));
        let start = archive.load().unwrap();
        let mut trained = Vec::new();
        let done = resume(&p, start.steps, start.diagnostics, &mut (), |k, s, d| {
            trained.push(k);
            archive.append_step(k, s, d)
        })
        .unwrap();
        assert_eq!(trained, vec![2, 3]);
        assert_eq!(done.steps, full.steps);
        assert_eq!(SolutionArchive::open(dir.path()).unwrap().load_complete().unwrap().steps, full.steps);
    }

    #[test]
    fn other_problem_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        SolutionArchive::create(dir.path(), &problem(2)).unwrap();
        assert!(matches!(SolutionArchive::create(dir.path(), &problem(3)), Err(Error::Config(_))));
    }

    #[test]
    fn steps_must_arrive_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = problem(2);
        let mut a = SolutionArchive::create(dir.path(), &p).unwrap();
        let net = p.initial_params().unwrap();
        let diag = StepDiagnostics { step: 2, stages: 0, initial_loss: 0.0, final_loss: 0.0, skipped_stages: 0, seconds: 0.0 };
        assert!(a.append_step(2, &net, &diag).is_err());
    }
}
