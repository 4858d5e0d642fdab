//! Python module `testingplus`.
//!
//! Digests and keys cross the boundary as `bytes`; structured values
//! (receipts, blocks, reports) as JSON strings, which keeps the Python side
//! free of a schema mirror.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use testingplus::chain::ChainError;
use testingplus::consensus::{run_simulation as simulate, SimScenario, SimTrace};
use testingplus::merkle::{merkle_proof as proof_of, MerkleProof, Side};
use testingplus::metrics::{analyze as analyze_trace, run_sweep as sweep, sweep_csv, SweepSpec};
use testingplus::{Digest, GenesisConfig, KeyFile, Keypair, PayloadRequest};

create_exception!(testingplus, CorruptionError, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn chain_err(e: ChainError) -> PyErr {
    if e.is_corruption() {
        CorruptionError::new_err(e.to_string())
    } else {
        value_err(e)
    }
}

fn digest(raw: &[u8]) -> PyResult<Digest> {
    Digest::from_slice(raw).map_err(value_err)
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(value_err)
}

#[pyfunction]
fn hash256<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &testingplus::hash256(data).0)
}

#[pyfunction]
fn merkle_root<'py>(py: Python<'py>, leaves: Vec<Vec<u8>>) -> PyResult<Bound<'py, PyBytes>> {
    let leaves = leaves
        .iter()
        .map(|l| digest(l))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(PyBytes::new(py, &testingplus::merkle_root(&leaves).0))
}

/// Sibling path as `[(digest, "left" | "right"), ...]`.
#[pyfunction]
fn merkle_proof<'py>(
    py: Python<'py>,
    leaves: Vec<Vec<u8>>,
    index: u64,
) -> PyResult<Vec<(Bound<'py, PyBytes>, &'static str)>> {
    let leaves = leaves
        .iter()
        .map(|l| digest(l))
        .collect::<PyResult<Vec<_>>>()?;
    let proof = proof_of(&leaves, index).map_err(value_err)?;
    Ok(proof
        .siblings
        .iter()
        .map(|(d, side)| {
            let side = match side {
                Side::Left => "left",
                Side::Right => "right",
            };
            (PyBytes::new(py, &d.0), side)
        })
        .collect())
}

#[pyfunction]
fn verify_merkle_proof(
    leaf: &[u8],
    index: u64,
    siblings: Vec<(Vec<u8>, String)>,
    root: &[u8],
) -> PyResult<bool> {
    let siblings = siblings
        .iter()
        .map(|(d, side)| {
            let side = match side.as_str() {
                "left" => Side::Left,
                "right" => Side::Right,
                other => return Err(value_err(format!("bad side {other:?}"))),
            };
            Ok((digest(d)?, side))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let proof = MerkleProof {
        leaf_index: index,
        siblings,
    };
    Ok(testingplus::verify_merkle_proof(
        &digest(leaf)?,
        &proof,
        &digest(root)?,
    ))
}

#[pyclass(name = "KeyPair", module = "testingplus", frozen)]
struct PyKeyPair {
    inner: Keypair,
}

#[pymethods]
impl PyKeyPair {
    #[staticmethod]
    fn generate() -> Self {
        PyKeyPair {
            inner: Keypair::generate(&mut rand::rngs::OsRng),
        }
    }

    #[staticmethod]
    fn from_seed(seed: &[u8]) -> PyResult<Self> {
        let seed: [u8; 32] = seed
            .try_into()
            .map_err(|_| value_err("seed must be 32 bytes"))?;
        Ok(PyKeyPair {
            inner: Keypair::from_seed(seed),
        })
    }

    #[staticmethod]
    fn derive(label: &str, seed: u64, index: u64) -> Self {
        PyKeyPair {
            inner: Keypair::derive(label, seed, index),
        }
    }

    /// Parses a key file as written by `testingplus keygen`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file: KeyFile = serde_json::from_str(text).map_err(value_err)?;
        Ok(PyKeyPair {
            inner: file.to_keypair().map_err(value_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&KeyFile::from_keypair(&self.inner))
    }

    #[getter]
    fn public_key<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.public_key().as_bytes())
    }

    #[getter]
    fn address(&self) -> String {
        self.inner.address().to_hex()
    }

    fn sign<'py>(&self, py: Python<'py>, msg: &[u8]) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.sign(msg).0)
    }

    fn __repr__(&self) -> String {
        format!("KeyPair(address={})", self.inner.address().to_hex())
    }
}

#[pyclass(name = "LocalChain", module = "testingplus")]
struct PyLocalChain {
    inner: testingplus::LocalChain,
}

#[pymethods]
impl PyLocalChain {
    #[staticmethod]
    fn init(store: PathBuf, genesis_json: &str, validator: &PyKeyPair) -> PyResult<Self> {
        let cfg: GenesisConfig = serde_json::from_str(genesis_json).map_err(value_err)?;
        let inner =
            testingplus::LocalChain::init(&store, cfg, &validator.inner).map_err(chain_err)?;
        Ok(PyLocalChain { inner })
    }

    #[staticmethod]
    fn open(store: PathBuf) -> PyResult<Self> {
        let inner = testingplus::LocalChain::open(&store).map_err(chain_err)?;
        Ok(PyLocalChain { inner })
    }

    #[getter]
    fn height(&self) -> u64 {
        self.inner.height()
    }

    /// Signs `{"payload": ..., "value": ...}` and commits it; returns the
    /// receipt JSON. A reverted receipt is not an error.
    fn submit(&mut self, key: &PyKeyPair, request_json: &str) -> PyResult<String> {
        let req: PayloadRequest = serde_json::from_str(request_json).map_err(value_err)?;
        let tx = self.inner.sign_request(&key.inner, req);
        let receipt = self.inner.submit(tx).map_err(chain_err)?;
        to_json(&receipt)
    }

    fn block(&self, height: u64) -> PyResult<String> {
        to_json(self.inner.block(height).map_err(chain_err)?)
    }

    fn state(&self) -> PyResult<String> {
        to_json(self.inner.state())
    }

    fn case(&self, case_id: &[u8]) -> PyResult<String> {
        to_json(&self.inner.case(&digest(case_id)?).map_err(chain_err)?)
    }

    fn audit(&self, case_id: &[u8]) -> PyResult<String> {
        to_json(&self.inner.audit(&digest(case_id)?).map_err(chain_err)?)
    }

    fn proof(&self, height: u64, tx_index: u64) -> PyResult<String> {
        to_json(&self.inner.proof(height, tx_index).map_err(chain_err)?)
    }
}

/// Runs a scenario (JSON) and returns its NDJSON trace.
#[pyfunction]
fn run_simulation(py: Python<'_>, scenario_json: &str) -> PyResult<String> {
    let sc: SimScenario = serde_json::from_str(scenario_json).map_err(value_err)?;
    let outcome = py.detach(|| simulate(&sc)).map_err(value_err)?;
    Ok(outcome.trace.to_ndjson())
}

/// Metrics report JSON for an NDJSON trace.
#[pyfunction]
fn analyze(trace_ndjson: &str) -> PyResult<String> {
    let trace = SimTrace::from_ndjson(trace_ndjson).map_err(value_err)?;
    to_json(&analyze_trace(&trace).map_err(value_err)?)
}

/// Runs a sweep (JSON) and returns the CSV table.
#[pyfunction]
fn run_sweep(py: Python<'_>, sweep_json: &str) -> PyResult<String> {
    let spec: SweepSpec = serde_json::from_str(sweep_json).map_err(value_err)?;
    let rows = py.detach(|| sweep(&spec)).map_err(value_err)?;
    Ok(sweep_csv(&rows))
}

#[pymodule]
#[pyo3(name = "testingplus")]
fn testingplus_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hash256, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_root, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_proof, m)?)?;
    m.add_function(wrap_pyfunction!(verify_merkle_proof, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_class::<PyKeyPair>()?;
    m.add_class::<PyLocalChain>()?;
    m.add("CorruptionError", m.py().get_type::<CorruptionError>())?;
    Ok(())
}
