//! Python bindings for the hashing, codec and PSI parts of `phg-core`.

use std::path::PathBuf;

use phg_core::hashcodec::{decode_grid as core_decode_grid, encode_binary_grid, PixelGrid, PixelGridMode};
use phg_core::imaging::{load_image_file, ImageBuffer};
use phg_core::phash::{self, Algorithm};
use phg_core::psi::{self, Ristretto255, Token};
use phg_core::service;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::rngs::OsRng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_algo(name: &str) -> PyResult<Algorithm> {
    name.parse().map_err(value_err)
}

fn image(width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<ImageBuffer> {
    ImageBuffer::new(width, height, channels, data).map_err(value_err)
}

/// A perceptual hash tagged with its algorithm.
#[pyclass(module = "phg", name = "PerceptualHash", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyHash(phash::PerceptualHash);

#[pymethods]
impl PyHash {
    /// Parses `ahash64:<hex>` or `pdq256:<hex>`.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        text.parse().map(PyHash).map_err(value_err)
    }

    #[getter]
    fn algorithm(&self) -> String {
        self.0.algorithm().to_string()
    }

    #[getter]
    fn hex(&self) -> String {
        self.0.to_hex()
    }

    #[getter]
    fn bits(&self) -> usize {
        self.0.bit_len()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.as_bytes())
    }

    fn __str__(&self) -> String {
        self.0.to_text()
    }

    fn __repr__(&self) -> String {
        format!("PerceptualHash('{}')", self.0)
    }
}

#[pyfunction]
#[pyo3(signature = (path, algo = "pdq"))]
fn hash_file(path: PathBuf, algo: &str) -> PyResult<PyHash> {
    let algo = parse_algo(algo)?;
    let img = load_image_file(&path).map_err(value_err)?;
    Ok(PyHash(algo.hash(&img)))
}

/// Hashes raw 8-bit samples (1 or 3 interleaved channels).
#[pyfunction]
#[pyo3(signature = (width, height, channels, data, algo = "pdq"))]
fn hash_image(width: usize, height: usize, channels: usize, data: Vec<u8>, algo: &str) -> PyResult<PyHash> {
    let algo = parse_algo(algo)?;
    Ok(PyHash(algo.hash(&image(width, height, channels, data)?)))
}

/// PDQ hash and quality score of raw samples.
#[pyfunction]
fn pdq(width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<(PyHash, u8)> {
    let r = phash::pdq(&image(width, height, channels, data)?);
    Ok((PyHash(r.hash), r.quality))
}

#[pyfunction]
fn hamming(a: &PyHash, b: &PyHash) -> PyResult<u32> {
    phash::hamming(&a.0, &b.0).map(|d| d.raw).map_err(value_err)
}

/// Normalized Hamming distance in `[0, 1]`.
#[pyfunction]
fn perceptual_difference(a: &PyHash, b: &PyHash) -> PyResult<f64> {
    phash::hamming(&a.0, &b.0).map(|d| d.normalized()).map_err(value_err)
}

/// Match under the default thresholds (PDQ 31/256, aHash 10/64).
#[pyfunction]
fn is_match(a: &PyHash, b: &PyHash) -> PyResult<bool> {
    phash::is_match(&a.0, &b.0, &phash::MatchPolicy::default()).map_err(value_err)
}

/// Row-major 0/255 samples of the hash's square grid.
#[pyfunction]
fn encode_grid<'py>(py: Python<'py>, h: &PyHash) -> PyResult<Bound<'py, PyBytes>> {
    let grid = encode_binary_grid(&h.0).map_err(value_err)?;
    Ok(PyBytes::new(py, grid.samples()))
}

#[pyfunction]
fn decode_grid(samples: Vec<u8>, algo: &str) -> PyResult<PyHash> {
    let algo = parse_algo(algo)?;
    let side = (samples.len() as f64).sqrt() as usize;
    let grid = PixelGrid::from_samples(side, samples, PixelGridMode::Byte)
        .ok_or_else(|| PyValueError::new_err("sample count is not a square"))?;
    core_decode_grid(&grid, algo).map(PyHash).map_err(value_err)
}

/// A provider's OPRF key over ristretto255.
#[pyclass(module = "phg", name = "OprfKey", frozen)]
struct PyKey(psi::OprfKey<Ristretto255>);

#[pymethods]
impl PyKey {
    #[staticmethod]
    fn generate() -> Self {
        PyKey(psi::OprfKey::generate(&Ristretto255, &mut OsRng))
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        psi::OprfKey::from_bytes(&Ristretto255, &data).map(PyKey).map_err(value_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes(&Ristretto255))
    }

    #[getter]
    fn key_id(&self) -> String {
        self.0.id().to_hex()
    }

    /// The token of `h` under this key.
    fn token<'py>(&self, py: Python<'py>, h: &PyHash) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &psi::direct_token(&Ristretto255, &h.0, &self.0).0)
    }

    fn __repr__(&self) -> String {
        format!("OprfKey(key_id='{}')", self.0.id())
    }
}

/// A provider's sorted token index (PHIX).
#[pyclass(module = "phg", name = "TokenIndex", frozen)]
struct PyIndex(psi::TokenIndex);

#[pymethods]
impl PyIndex {
    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        psi::TokenIndex::from_bytes(&data).map(PyIndex).map_err(value_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    #[getter]
    fn algorithm(&self) -> String {
        self.0.algorithm().to_string()
    }

    #[getter]
    fn key_id(&self) -> String {
        self.0.key_id().to_hex()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, token: Vec<u8>) -> bool {
        Token::from_slice(&token).is_ok_and(|t| self.0.contains(&t))
    }
}

fn unwrap_hashes(hashes: &[PyRef<'_, PyHash>]) -> Vec<phash::PerceptualHash> {
    hashes.iter().map(|h| h.0).collect()
}

fn common_algorithm(hashes: &[phash::PerceptualHash], algo: Option<&str>) -> PyResult<Algorithm> {
    match (algo, hashes.first()) {
        (Some(a), _) => parse_algo(a),
        (None, Some(h)) => Ok(h.algorithm()),
        (None, None) => Err(PyValueError::new_err("empty set needs algo")),
    }
}

#[pyfunction]
#[pyo3(signature = (hashes, key, algo = None))]
fn build_index(hashes: Vec<PyRef<'_, PyHash>>, key: &PyKey, algo: Option<&str>) -> PyResult<PyIndex> {
    let set = unwrap_hashes(&hashes);
    let algo = common_algorithm(&set, algo)?;
    psi::build_index(&Ristretto255, algo, &set, &key.0).map(PyIndex).map_err(value_err)
}

/// Runs the whole PSI protocol in-process and returns what the provider
/// learns: the client hashes found in `provider_hashes`.
#[pyfunction]
fn psi_local(
    client_hashes: Vec<PyRef<'_, PyHash>>,
    provider_hashes: Vec<PyRef<'_, PyHash>>,
    key: &PyKey,
) -> PyResult<Vec<PyHash>> {
    let group = Ristretto255;
    let set = psi::ClientSet::new(&group, unwrap_hashes(&client_hashes), &mut OsRng).map_err(value_err)?;
    let out = psi::run_psi_local(&group, &set, &unwrap_hashes(&provider_hashes), &key.0).map_err(value_err)?;
    Ok(out.provider_output.into_iter().map(PyHash).collect())
}

/// Reports `hashes` to a running coordinator. Returns
/// `(providers_contacted, tokens_sent)`.
#[pyfunction]
fn report(py: Python<'_>, addr: String, hashes: Vec<PyRef<'_, PyHash>>) -> PyResult<(u32, usize)> {
    let set = unwrap_hashes(&hashes);
    py.detach(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        rt.block_on(service::client_report(&addr, &set))
            .map(|r| (r.providers_contacted, r.tokens_sent))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    })
}

#[pymodule]
fn phg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHash>()?;
    m.add_class::<PyKey>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(hash_file, m)?)?;
    m.add_function(wrap_pyfunction!(hash_image, m)?)?;
    m.add_function(wrap_pyfunction!(pdq, m)?)?;
    m.add_function(wrap_pyfunction!(hamming, m)?)?;
    m.add_function(wrap_pyfunction!(perceptual_difference, m)?)?;
    m.add_function(wrap_pyfunction!(is_match, m)?)?;
    m.add_function(wrap_pyfunction!(encode_grid, m)?)?;
    m.add_function(wrap_pyfunction!(decode_grid, m)?)?;
    m.add_function(wrap_pyfunction!(build_index, m)?)?;
    m.add_function(wrap_pyfunction!(psi_local, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
