//! Voxel file format: one JSON header line, then the values as 64-bit
//! little-endian floats (point-major, row-major point order), then one
//! unsigned byte per point with the phase label when `num_phases > 0`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell_solver::CorrectorSolution;
use crate::error::{Error, Result};
use crate::geometry::CellGrid;
use crate::tensor::packed_len;

pub const TENSOR_LAYOUT: &str = "row-major symmetric upper-triangle";
pub const MATRIX_LAYOUT: &str = "row-major full matrix";
pub const SCALAR_LAYOUT: &str = "scalar per direction";

/// Header line of a voxel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelHeader {
    pub dim: usize,
    pub resolution: usize,
    /// Per-axis point counts for non-cubic grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    pub num_phases: usize,
    pub tensor_layout: String,
    pub components: usize,
}

impl VoxelHeader {
    pub fn num_points(&self) -> usize {
        match &self.shape {
            Some(s) => s.iter().product(),
            None => self.resolution.pow(self.dim as u32),
        }
    }
}

/// Contents of a voxel file.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelData {
    pub header: VoxelHeader,
    pub values: Vec<f64>,
    pub phases: Vec<u8>,
}

pub fn write_voxels(path: &Path, header: &VoxelHeader, values: &[f64], phases: &[u8]) -> Result<()> {
    let n = header.num_points();
    if values.len() != n * header.components {
        return Err(Error::Format(format!(
            "expected {} values, got {}",
            n * header.components,
            values.len()
        )));
    }
    if (header.num_phases > 0 && phases.len() != n) || (header.num_phases == 0 && !phases.is_empty()) {
        return Err(Error::Format("phase blob length does not match the header".into()));
    }
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    buf.reserve(values.len() * 8 + phases.len());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(phases);
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_voxels(path: &Path) -> Result<VoxelData> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: VoxelHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::Format(format!("bad voxel header: {e}")))?;
    let n = header.num_points();
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let nbytes = n * header.components * 8;
    let nphase = if header.num_phases > 0 { n } else { 0 };
    if rest.len() != nbytes + nphase {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            nbytes + nphase,
            rest.len()
        )));
    }
    let values = rest[..nbytes]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let phases = rest[nbytes..].to_vec();
    Ok(VoxelData { header, values, phases })
}

pub fn write_grid(path: &Path, grid: &CellGrid) -> Result<()> {
    let header = VoxelHeader {
        dim: grid.dim(),
        resolution: grid.resolution(),
        shape: None,
        num_phases: grid.num_phases(),
        tensor_layout: TENSOR_LAYOUT.into(),
        components: packed_len(grid.dim()),
    };
    write_voxels(path, &header, grid.packed_tensors(), grid.phases())
}

pub fn read_grid(path: &Path) -> Result<CellGrid> {
    let data = read_voxels(path)?;
    let h = &data.header;
    if h.tensor_layout != TENSOR_LAYOUT || h.shape.is_some() || h.components != packed_len(h.dim) {
        return Err(Error::Format("file does not hold a conductivity grid".into()));
    }
    CellGrid::from_parts(h.dim, h.resolution, h.num_phases, data.values, data.phases)
}

/// Writes `w.vox`, `P.vox` and `corrector.json` into `dir`.
pub fn write_corrector(dir: &Path, sol: &CorrectorSolution) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grid = sol.grid();
    let d = grid.dim();
    let nv = grid.num_voxels();
    let mut w = vec![0.0; nv * d];
    for i in 0..d {
        for (v, x) in sol.corrector(i).iter().enumerate() {
            w[v * d + i] = *x;
        }
    }
    let header = |layout: &str, components| VoxelHeader {
        dim: d,
        resolution: grid.resolution(),
        shape: None,
        num_phases: grid.num_phases(),
        tensor_layout: layout.into(),
        components,
    };
    write_voxels(&dir.join("w.vox"), &header(SCALAR_LAYOUT, d), &w, grid.phases())?;
    write_voxels(&dir.join("P.vox"), &header(MATRIX_LAYOUT, d * d), sol.p_field().values(), grid.phases())?;
    fs::write(dir.join("corrector.json"), serde_json::to_string_pretty(&sol.metadata())?)?;
    Ok(())
}
