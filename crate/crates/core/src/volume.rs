//! Voxel grids and their on-disk formats.
//!
//! A VVOL (HU volume) or VLBL (label map) is a small UTF-8 header plus a raw
//! little-endian payload stored next to it, x varying fastest, then y, then z:
//!
//! ```text
//! VVOL
//! schema_version = 1
//! dims = 64 80 170
//! spacing_mm = 1 1 1
//! origin_mm = -24 -48 0
//! dtype = int16le
//! data_file = S0.vvol.raw
//! ```
//!
//! A VLBL header uses `dtype = uint16le` and ends with a `[legend]` section of
//! `value = ROLE` lines, where ROLE is `VERTEBRA <level>`, `MUSCLE_REF`,
//! `FAT_REF` or `CANAL`. Floating-point fields are written in shortest
//! round-trip form, so save then load reproduces every field exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::morphology::SubGrid;

pub const SCHEMA_VERSION: u32 = 1;
pub const HU_MIN: i16 = -1024;
pub const HU_MAX: i16 = 3071;

/// Shape and placement of a voxel grid. `origin` is the world position (mm) of
/// the centre of voxel (0, 0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Geometry(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Geometry { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    pub fn coord(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// World position (mm) of a voxel centre.
    #[inline]
    pub fn world(&self, v: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + v[0] as f64 * self.spacing[0],
            self.origin[1] + v[1] as f64 * self.spacing[1],
            self.origin[2] + v[2] as f64 * self.spacing[2],
        ]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// CT intensities in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<i16>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<i16>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::PayloadSize {
                expected: geometry.len() * 2,
                found: data.len() * 2,
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| !(HU_MIN..=HU_MAX).contains(&v))
        {
            return Err(Error::HuRange { index, value });
        }
        Ok(Volume { geometry, data })
    }

    /// A volume filled with a single HU value.
    pub fn filled(geometry: Geometry, hu: i16) -> Result<Self> {
        Volume::new(geometry, vec![hu; geometry.len()])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    /// Sets a sample, clamping to the valid HU range.
    pub fn set(&mut self, index: usize, hu: i16) {
        self.data[index] = hu.clamp(HU_MIN, HU_MAX);
    }

    /// Applies `f` to every sample, clamping the result to the valid HU range.
    pub fn map_hu(&self, f: impl Fn(i16) -> f64) -> Volume {
        let data = self
            .data
            .iter()
            .map(|&v| f(v).round().clamp(HU_MIN as f64, HU_MAX as f64) as i16)
            .collect();
        Volume {
            geometry: self.geometry,
            data,
        }
    }
}

/// Semantic role of a nonzero label value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelRole {
    /// A vertebral body at the given level (1 = most superior thoracic).
    Vertebra { level: u32 },
    MuscleRef,
    FatRef,
    Canal,
}

impl fmt::Display for LabelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelRole::Vertebra { level } => write!(f, "VERTEBRA {level}"),
            LabelRole::MuscleRef => f.write_str("MUSCLE_REF"),
            LabelRole::FatRef => f.write_str("FAT_REF"),
            LabelRole::Canal => f.write_str("CANAL"),
        }
    }
}

impl FromStr for LabelRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("VERTEBRA"), Some(level), None) => level
                .parse()
                .map(|level| LabelRole::Vertebra { level })
                .map_err(|_| format!("bad vertebra level {level:?}")),
            (Some("MUSCLE_REF"), None, None) => Ok(LabelRole::MuscleRef),
            (Some("FAT_REF"), None, None) => Ok(LabelRole::FatRef),
            (Some("CANAL"), None, None) => Ok(LabelRole::Canal),
            _ => Err(format!("unknown label role {s:?}")),
        }
    }
}

/// Co-registered segmentation: one label per voxel, 0 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    geometry: Geometry,
    labels: Vec<u16>,
    legend: BTreeMap<u16, LabelRole>,
}

impl LabelMap {
    /// Builds and validates a label map: every nonzero label must be in the
    /// legend and every vertebra label must be a single 26-connected body.
    pub fn new(geometry: Geometry, labels: Vec<u16>, legend: BTreeMap<u16, LabelRole>) -> Result<Self> {
        let map = LabelMap::new_unchecked(geometry, labels, legend)?;
        map.validate()?;
        Ok(map)
    }

    pub(crate) fn new_unchecked(
        geometry: Geometry,
        labels: Vec<u16>,
        legend: BTreeMap<u16, LabelRole>,
    ) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(Error::PayloadSize {
                expected: geometry.len() * 2,
                found: labels.len() * 2,
            });
        }
        if legend.contains_key(&0) {
            return Err(Error::Geometry("label 0 is reserved for background".into()));
        }
        Ok(LabelMap {
            geometry,
            labels,
            legend,
        })
    }

    pub fn empty(geometry: Geometry) -> Self {
        LabelMap {
            geometry,
            labels: vec![0; geometry.len()],
            legend: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut voxels: BTreeMap<u16, Vec<[usize; 3]>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if l == 0 {
                continue;
            }
            if !self.legend.contains_key(&l) {
                return Err(Error::LegendMissing(l));
            }
            if matches!(self.legend[&l], LabelRole::Vertebra { .. }) {
                voxels.entry(l).or_default().push(self.geometry.coord(i));
            }
        }
        for (label, vox) in voxels {
            let components = SubGrid::from_voxels(&vox, 0).map_or(0, |g| g.components_26());
            if components != 1 {
                return Err(Error::Disconnected { label, components });
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn legend(&self) -> &BTreeMap<u16, LabelRole> {
        &self.legend
    }

    pub fn set(&mut self, index: usize, label: u16) {
        self.labels[index] = label;
    }

    pub fn insert_role(&mut self, label: u16, role: LabelRole) {
        self.legend.insert(label, role);
    }

    pub fn role(&self, label: u16) -> Option<LabelRole> {
        self.legend.get(&label).copied()
    }

    /// First label carrying `role`, if any.
    pub fn label_with_role(&self, role: LabelRole) -> Option<u16> {
        self.legend.iter().find(|(_, &r)| r == role).map(|(&l, _)| l)
    }

    /// Vertebra labels with their levels, ordered superior to inferior.
    pub fn vertebrae(&self) -> Vec<(u16, u32)> {
        let mut v: Vec<(u16, u32)> = self
            .legend
            .iter()
            .filter_map(|(&l, r)| match r {
                LabelRole::Vertebra { level } => Some((l, *level)),
                _ => None,
            })
            .collect();
        v.sort_by_key(|&(l, level)| (level, l));
        v
    }

    pub fn level_of(&self, label: u16) -> Option<u32> {
        match self.legend.get(&label) {
            Some(LabelRole::Vertebra { level }) => Some(*level),
            _ => None,
        }
    }

    /// Voxel coordinates carrying `label`, in storage order.
    pub fn voxels_of(&self, label: u16) -> Vec<[usize; 3]> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| self.geometry.coord(i))
            .collect()
    }

    pub fn indices_of(&self, label: u16) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Errors unless this map shares `volume`'s grid exactly.
    pub fn check_paired(&self, volume: &Volume) -> Result<()> {
        if self.geometry != *volume.geometry() {
            return Err(Error::Geometry(format!(
                "label map geometry {:?} differs from volume geometry {:?}",
                self.geometry,
                volume.geometry()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// I/O

#[derive(Debug)]
struct Header {
    magic: String,
    fields: BTreeMap<String, String>,
    legend: Vec<(String, String)>,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let magic = lines
        .next()
        .ok_or_else(|| Error::header(path, "empty header"))?
        .to_string();
    let mut fields = BTreeMap::new();
    let mut legend = Vec::new();
    let mut in_legend = false;
    for line in lines {
        if line == "[legend]" {
            in_legend = true;
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::header(path, format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if in_legend {
            legend.push((k, v));
        } else if fields.insert(k.clone(), v).is_some() {
            return Err(Error::header(path, format!("duplicate key {k:?}")));
        }
    }
    Ok(Header { magic, fields, legend })
}

impl Header {
    fn get(&self, path: &Path, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::header(path, format!("missing key {key:?}")))
    }

    fn triple<T: FromStr>(&self, path: &Path, key: &str) -> Result<[T; 3]> {
        let raw = self.get(path, key)?;
        let parts: Vec<T> = raw
            .split_whitespace()
            .map(|p| p.parse::<T>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::header(path, format!("bad value for {key}: {raw:?}")))?;
        parts
            .try_into()
            .map_err(|_| Error::header(path, format!("{key} needs three values, got {raw:?}")))
    }

    fn geometry(&self, path: &Path) -> Result<Geometry> {
        let version: u32 = self
            .get(path, "schema_version")?
            .parse()
            .map_err(|_| Error::header(path, "schema_version is not an integer"))?;
        if version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        Geometry::new(
            self.triple(path, "dims")?,
            self.triple(path, "spacing_mm")?,
            self.triple(path, "origin_mm")?,
        )
    }
}

fn geometry_lines(magic: &str, g: &Geometry, dtype: &str, data_file: &str) -> String {
    let [nx, ny, nz] = g.dims;
    let [sx, sy, sz] = g.spacing;
    let [ox, oy, oz] = g.origin;
    format!(
        "{magic}\nschema_version = {SCHEMA_VERSION}\ndims = {nx} {ny} {nz}\nspacing_mm = {sx} {sy} {sz}\norigin_mm = {ox} {oy} {oz}\ndtype = {dtype}\ndata_file = {data_file}\n"
    )
}

fn payload_name(header: &Path) -> Result<String> {
    let name = header
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::header(header, "header path has no UTF-8 file name"))?;
    Ok(format!("{name}.raw"))
}

fn read_payload(header_path: &Path, header: &Header, expected_dtype: &str, voxels: usize) -> Result<Vec<u8>> {
    let dtype = header.get(header_path, "dtype")?;
    if dtype != expected_dtype {
        return Err(Error::header(
            header_path,
            format!("dtype {dtype:?}, expected {expected_dtype:?}"),
        ));
    }
    let data_file = header.get(header_path, "data_file")?;
    let payload_path = header_path.parent().unwrap_or(Path::new("")).join(data_file);
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    if bytes.len() != voxels * 2 {
        return Err(Error::PayloadSize {
            expected: voxels * 2,
            found: bytes.len(),
        });
    }
    Ok(bytes)
}

fn write_pair(header_path: &Path, header: &str, payload: &[u8]) -> Result<()> {
    let payload_path: PathBuf = header_path
        .parent()
        .unwrap_or(Path::new(""))
        .join(payload_name(header_path)?);
    fs::write(&payload_path, payload).map_err(|e| Error::io(&payload_path, e))?;
    fs::write(header_path, header).map_err(|e| Error::io(header_path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &text)?;
    if header.magic != "VVOL" {
        return Err(Error::header(path, format!("expected VVOL, found {:?}", header.magic)));
    }
    let geometry = header.geometry(path)?;
    let bytes = read_payload(path, &header, "int16le", geometry.len())?;
    let data = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Volume::new(geometry, data)
}

pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = geometry_lines("VVOL", &volume.geometry, "int16le", &payload_name(path)?);
    let payload: Vec<u8> = volume.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_pair(path, &header, &payload)
}

pub fn load_labelmap(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &text)?;
    if header.magic != "VLBL" {
        return Err(Error::header(path, format!("expected VLBL, found {:?}", header.magic)));
    }
    let geometry = header.geometry(path)?;
    let bytes = read_payload(path, &header, "uint16le", geometry.len())?;
    let labels = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let mut legend = BTreeMap::new();
    for (k, v) in &header.legend {
        let label: u16 = k
            .parse()
            .map_err(|_| Error::header(path, format!("bad legend label {k:?}")))?;
        let role: LabelRole = v.parse().map_err(|m: String| Error::header(path, m))?;
        if legend.insert(label, role).is_some() {
            return Err(Error::header(path, format!("duplicate legend entry {label}")));
        }
    }
    LabelMap::new(geometry, labels, legend)
}

/// Loads a label map and checks that it shares `volume`'s grid.
pub fn load_labelmap_paired(path: impl AsRef<Path>, volume: &Volume) -> Result<LabelMap> {
    let map = load_labelmap(path)?;
    map.check_paired(volume)?;
    Ok(map)
}

pub fn save_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut header = geometry_lines("VLBL", &map.geometry, "uint16le", &payload_name(path)?);
    header.push_str("[legend]\n");
    for (label, role) in &map.legend {
        header.push_str(&format!("{label} = {role}\n"));
    }
    let payload: Vec<u8> = map.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_pair(path, &header, &payload)
}
