//! Python bindings: images, metrics, resampling, Canny and the three networks.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sredgenet::imageproc::{self, EdgeMap};
use sredgenet::pipeline::{self, PipelinePaths};
use sredgenet::{Checkpoint, Error, MergeConfig, MergeNet, ParamSet, SrConfig, SrNet};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Channel-major float image with values in [0, 1].
#[pyclass(name = "Image", module = "sredgenet", skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: imageproc::ImageBuffer,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        let inner = imageproc::ImageBuffer::new(channels, height, width, data).map_err(py_err)?;
        Ok(PyImage { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyImage {
            inner: imageproc::load_png(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        imageproc::save_png(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.channels(), self.inner.height(), self.inner.width())
    }

    /// Flat `[C, H, W]` values.
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, c: usize, y: usize, x: usize) -> PyResult<f32> {
        let (ch, h, w) = self.shape();
        if c >= ch || y >= h || x >= w {
            return Err(PyValueError::new_err(format!("index ({c}, {y}, {x}) outside {:?}", (ch, h, w))));
        }
        Ok(self.inner.get(c, y, x))
    }

    fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> PyResult<Self> {
        Ok(PyImage {
            inner: self.inner.crop(top, left, height, width).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        let (c, h, w) = self.shape();
        format!("Image(channels={c}, height={h}, width={w})")
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

fn edge_image(e: &EdgeMap) -> PyImage {
    PyImage {
        inner: e.plane().to_image(),
    }
}

#[pyfunction]
#[pyo3(signature = (a, b, scale=2))]
fn psnr(a: &PyImage, b: &PyImage, scale: usize) -> PyResult<f64> {
    imageproc::psnr(&a.inner, &b.inner, scale).map_err(py_err)
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    imageproc::ssim(&a.inner, &b.inner).map_err(py_err)
}

#[pyfunction]
fn bicubic_resize(img: &PyImage, height: usize, width: usize) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: imageproc::bicubic_resize(&img.inner, (height, width)).map_err(py_err)?,
    })
}

#[pyfunction]
fn offset_fix(img: &PyImage) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: imageproc::offset_fix(&img.inner).map_err(py_err)?,
    })
}

/// `(lr, hr)`: the offset-fixed HR image and its bicubic downscale.
#[pyfunction]
fn degrade(hr: &PyImage, scale: usize) -> PyResult<(PyImage, PyImage)> {
    let (l, h) = imageproc::degrade_pair(&hr.inner, scale).map_err(py_err)?;
    Ok((PyImage { inner: l }, PyImage { inner: h }))
}

/// Binary Canny map of the luma plane, thresholds relative to the largest
/// gradient magnitude. Returned as a 1-channel image.
#[pyfunction]
#[pyo3(signature = (img, sigma=1.4, low=0.1, high=0.2))]
fn canny(img: &PyImage, sigma: f64, low: f64, high: f64) -> PyResult<PyImage> {
    let plane = if img.inner.channels() == 3 {
        imageproc::rgb_to_y(&img.inner).map_err(py_err)?
    } else {
        img.inner.channel_plane(0)
    };
    let e = imageproc::canny_relative(&plane, sigma, low, high).map_err(py_err)?;
    Ok(edge_image(&e))
}

/// Named float32 tensors, as stored in a checkpoint.
#[pyclass(name = "Params", module = "sredgenet", skip_from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: ParamSet<f32>,
}

#[pymethods]
impl PyParams {
    fn names(&self) -> Vec<String> {
        self.inner.names().map(str::to_string).collect()
    }

    fn num_scalars(&self) -> usize {
        self.inner.num_scalars()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "SrNet", module = "sredgenet")]
struct PySrNet {
    net: SrNet,
}

#[pymethods]
impl PySrNet {
    #[new]
    #[pyo3(signature = (scale=2, n_resblocks=None, n_feats=None))]
    fn new(scale: usize, n_resblocks: Option<usize>, n_feats: Option<usize>) -> PyResult<Self> {
        let d = SrConfig::default();
        let cfg = SrConfig {
            scale,
            n_resblocks: n_resblocks.unwrap_or(d.n_resblocks),
            n_feats: n_feats.unwrap_or(d.n_feats),
            ..d
        };
        Ok(PySrNet {
            net: SrNet::new(&cfg).map_err(py_err)?,
        })
    }

    /// `(net, params)` from a trained checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, PyParams)> {
        let (net, params) = pipeline::load_sr(path).map_err(py_err)?;
        Ok((PySrNet { net }, PyParams { inner: params }))
    }

    #[getter]
    fn scale(&self) -> usize {
        self.net.cfg.scale
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn init(&self, seed: u64) -> PyParams {
        PyParams {
            inner: self.net.init(seed),
        }
    }

    fn upscale(&self, params: &PyParams, lr: &PyImage) -> PyResult<PyImage> {
        Ok(PyImage {
            inner: self.net.infer(&params.inner, &lr.inner).map_err(py_err)?,
        })
    }
}

#[pyclass(name = "MergeNet", module = "sredgenet")]
struct PyMergeNet {
    net: MergeNet,
}

#[pymethods]
impl PyMergeNet {
    #[new]
    #[pyo3(signature = (edge_skip=true, n_resblocks=None, n_feats=None))]
    fn new(edge_skip: bool, n_resblocks: Option<usize>, n_feats: Option<usize>) -> PyResult<Self> {
        let d = MergeConfig::default();
        let cfg = MergeConfig {
            edge_skip,
            n_resblocks: n_resblocks.unwrap_or(d.n_resblocks),
            n_feats: n_feats.unwrap_or(d.n_feats),
            ..d
        };
        Ok(PyMergeNet {
            net: MergeNet::new(&cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, PyParams)> {
        let (net, params, _) = pipeline::load_merge(path).map_err(py_err)?;
        Ok((PyMergeNet { net }, PyParams { inner: params }))
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn init(&self, seed: u64) -> PyParams {
        PyParams {
            inner: self.net.init(seed),
        }
    }

    /// Fuse an SR image with a 1-channel edge image of the same extent.
    fn merge(&self, params: &PyParams, sr: &PyImage, edge: &PyImage) -> PyResult<PyImage> {
        let edge = EdgeMap::from_image(&edge.inner).map_err(py_err)?;
        Ok(PyImage {
            inner: self.net.infer(&params.inner, &sr.inner, &edge).map_err(py_err)?,
        })
    }
}

/// The trained edge ensemble described by a manifest.
#[pyclass(name = "EdgeEnsemble", module = "sredgenet")]
struct PyEdgeEnsemble {
    inner: sredgenet::EdgeEnsemble,
}

#[pymethods]
impl PyEdgeEnsemble {
    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        Ok(PyEdgeEnsemble {
            inner: pipeline::load_edge_ensemble(manifest).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.members.len()
    }

    fn predict(&self, img: &PyImage) -> PyResult<PyImage> {
        Ok(edge_image(&self.inner.predict(&img.inner).map_err(py_err)?))
    }
}

/// SR, edge and merge stages loaded from checkpoints.
#[pyclass(name = "Pipeline", module = "sredgenet")]
struct PyPipeline {
    inner: sredgenet::Pipeline,
}

#[pymethods]
impl PyPipeline {
    #[staticmethod]
    fn load(sr_ckpt: PathBuf, edge_manifest: PathBuf, merge_ckpt: PathBuf, scale: usize) -> PyResult<Self> {
        let paths = PipelinePaths {
            sr_ckpt,
            edge_manifest,
            merge_ckpt,
        };
        Ok(PyPipeline {
            inner: sredgenet::Pipeline::load(&paths, scale).map_err(py_err)?,
        })
    }

    /// `(sr, edge, output)` for one LR image.
    fn run(&self, lr: &PyImage) -> PyResult<(PyImage, PyImage, PyImage)> {
        let out = self.inner.run(&lr.inner).map_err(py_err)?;
        Ok((PyImage { inner: out.sr }, edge_image(&out.edge), PyImage { inner: out.output }))
    }
}

/// Step count and epoch stored in a checkpoint file.
#[pyfunction]
fn checkpoint_info(path: PathBuf) -> PyResult<(u64, u64, PyParams)> {
    let ck = Checkpoint::load(path).map_err(py_err)?;
    Ok((ck.epoch, ck.step, PyParams { inner: ck.params }))
}

#[pymodule(name = "sredgenet")]
fn sredgenet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PySrNet>()?;
    m.add_class::<PyMergeNet>()?;
    m.add_class::<PyEdgeEnsemble>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(bicubic_resize, m)?)?;
    m.add_function(wrap_pyfunction!(offset_fix, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(canny, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_info, m)?)?;
    Ok(())
}
