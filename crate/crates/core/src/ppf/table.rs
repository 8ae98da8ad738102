use rustc_hash::FxHashMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use super::feature::{
    alpha_angle, compute_ppf, discretize, intermediate_frame, QuantizationParams,
};
use crate::error::{Error, Result};
use crate::geometry::{angle_between_unit, OrientedPointCloud, RigidTransform, Vec3};
use crate::preprocess::{preprocess, SubsampleParams};

pub const MAGIC: &[u8; 4] = b"PPFM";
pub const FORMAT_VERSION: u16 = 1;

/// One stored model pair: the reference point and its rotation angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableEntry {
    pub ref_index: u32,
    pub alpha: f32,
}

/// Global model description: every ordered pair of the subsampled model,
/// grouped by packed discretized feature.
///
/// Entries are kept in one flat array sorted by packed key (and, within a
/// key, by reference then partner index); the map points into it.
#[derive(Debug, Clone)]
pub struct ModelTable {
    model: OrientedPointCloud,
    frames: Vec<RigidTransform>,
    quant: QuantizationParams,
    subsample: SubsampleParams,
    diameter: f64,
    index: FxHashMap<u32, (u32, u32)>,
    keys: Vec<u32>,
    entries: Vec<TableEntry>,
}

impl PartialEq for ModelTable {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model
            && self.quant == other.quant
            && self.subsample == other.subsample
            && self.diameter.to_bits() == other.diameter.to_bits()
            && self.keys == other.keys
            && self.entries == other.entries
    }
}

impl ModelTable {
    /// Preprocesses the raw model and inserts every ordered pair `(i, j)`
    /// with `i ≠ j` whose distance is at most the subsampled diameter.
    /// `q.d_max` is overwritten with that diameter.
    pub fn build(
        model_raw: &OrientedPointCloud,
        sp: &SubsampleParams,
        q: &QuantizationParams,
    ) -> Result<ModelTable> {
        let model = preprocess(model_raw, sp)?.rounded_to_f32();
        if model.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: model.len(),
            });
        }
        let diameter = model.diameter();
        let mut quant = *q;
        quant.d_max = diameter;
        Self::from_subsampled(model, *sp, quant)
    }

    /// Builds the table over an already preprocessed cloud, keeping
    /// `q.d_max` as given.
    pub fn from_subsampled(
        model: OrientedPointCloud,
        subsample: SubsampleParams,
        quant: QuantizationParams,
    ) -> Result<ModelTable> {
        quant.validate()?;
        if model.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: model.len(),
            });
        }
        let diameter = model.diameter();
        let pts = model.points();
        let nrm = model.normals();
        let frames: Vec<RigidTransform> = pts
            .iter()
            .zip(nrm)
            .map(|(p, n)| intermediate_frame(p, n))
            .collect();

        let records: Vec<(u32, TableEntry)> = (0..pts.len())
            .into_par_iter()
            .map(|i| {
                let mut local = Vec::new();
                for j in 0..pts.len() {
                    if i == j {
                        continue;
                    }
                    if quant.min_pair_normal_angle > 0.0
                        && angle_between_unit(&nrm[i], &nrm[j]) < quant.min_pair_normal_angle
                    {
                        continue;
                    }
                    let Ok(f) = compute_ppf(&pts[i], &nrm[i], &pts[j], &nrm[j]) else {
                        continue;
                    };
                    if f.dist > quant.d_max {
                        continue;
                    }
                    let key = discretize(&f, &quant).pack(&quant);
                    let alpha = alpha_angle(&frames[i], &pts[j]) as f32;
                    local.push((
                        key,
                        TableEntry {
                            ref_index: i as u32,
                            alpha,
                        },
                    ));
                }
                local
            })
            .flatten()
            .collect();

        Ok(Self::assemble(model, frames, quant, subsample, diameter, records))
    }

    fn assemble(
        model: OrientedPointCloud,
        frames: Vec<RigidTransform>,
        quant: QuantizationParams,
        subsample: SubsampleParams,
        diameter: f64,
        mut records: Vec<(u32, TableEntry)>,
    ) -> ModelTable {
        // stable: keeps (i, j) order inside a key
        records.sort_by_key(|r| r.0);
        let mut index = FxHashMap::default();
        let mut keys = Vec::new();
        let mut entries = Vec::with_capacity(records.len());
        let mut start = 0usize;
        while start < records.len() {
            let key = records[start].0;
            let mut end = start;
            while end < records.len() && records[end].0 == key {
                entries.push(records[end].1);
                end += 1;
            }
            index.insert(key, (start as u32, (end - start) as u32));
            keys.push(key);
            start = end;
        }
        ModelTable {
            model,
            frames,
            quant,
            subsample,
            diameter,
            index,
            keys,
            entries,
        }
    }

    pub fn model(&self) -> &OrientedPointCloud {
        &self.model
    }

    /// Intermediate frame of each model point.
    pub fn frames(&self) -> &[RigidTransform] {
        &self.frames
    }

    pub fn quant(&self) -> &QuantizationParams {
        &self.quant
    }

    pub fn subsample_params(&self) -> &SubsampleParams {
        &self.subsample
    }

    pub fn leaf(&self) -> f64 {
        self.subsample.leaf
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    pub fn lookup(&self, packed_key: u32) -> &[TableEntry] {
        &self.entries[self.lookup_range(packed_key)]
    }

    /// Position of the entries of `packed_key` within [`entries`](Self::entries).
    #[inline]
    pub fn lookup_range(&self, packed_key: u32) -> std::ops::Range<usize> {
        match self.index.get(&packed_key) {
            Some(&(start, len)) => start as usize..(start + len) as usize,
            None => 0..0,
        }
    }

    /// Every entry, grouped by packed key.
    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    /// `(packed key, entry)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &TableEntry)> + '_ {
        self.keys.iter().flat_map(move |k| {
            self.lookup(*k).iter().map(move |e| (*k, e))
        })
    }

    /// Binary "PPFM" encoding, little-endian throughout:
    ///
    /// ```text
    /// magic "PPFM" | version u16
    /// d_max f64 | n_dist_bins u32 | n_angle_bins u32 | noise_fraction f64
    /// min_pair_normal_angle f64
    /// leaf f64 | normal_cluster_angle f64 | merge_neighbor_clusters u8
    /// point count u64 | diameter f64
    /// points: (x, y, z, nx, ny, nz) as f32
    /// entry count u64
    /// entries: packed key u32 | ref_index u32 | alpha f32
    /// ```
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let q = &self.quant;
        w.write_all(&q.d_max.to_le_bytes())?;
        w.write_all(&q.n_dist_bins.to_le_bytes())?;
        w.write_all(&q.n_angle_bins.to_le_bytes())?;
        w.write_all(&q.noise_fraction.to_le_bytes())?;
        w.write_all(&q.min_pair_normal_angle.to_le_bytes())?;
        let s = &self.subsample;
        w.write_all(&s.leaf.to_le_bytes())?;
        w.write_all(&s.normal_cluster_angle.to_le_bytes())?;
        w.write_all(&[s.merge_neighbor_clusters as u8])?;
        w.write_all(&(self.model.len() as u64).to_le_bytes())?;
        w.write_all(&self.diameter.to_le_bytes())?;
        for (p, n) in self.model.points().iter().zip(self.model.normals()) {
            for v in [p.x, p.y, p.z, n.x, n.y, n.z] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (key, e) in self.iter() {
            w.write_all(&key.to_le_bytes())?;
            w.write_all(&e.ref_index.to_le_bytes())?;
            w.write_all(&e.alpha.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<ModelTable> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::TableFormat("bad magic, not a PPFM file".into()));
        }
        let version = u16::from_le_bytes(take(r, "version")?);
        if version != FORMAT_VERSION {
            return Err(Error::TableFormat(format!("unsupported version {version}")));
        }
        let quant = QuantizationParams {
            d_max: f64::from_le_bytes(take(r, "d_max")?),
            n_dist_bins: u32::from_le_bytes(take(r, "n_dist_bins")?),
            n_angle_bins: u32::from_le_bytes(take(r, "n_angle_bins")?),
            noise_fraction: f64::from_le_bytes(take(r, "noise_fraction")?),
            min_pair_normal_angle: f64::from_le_bytes(take(r, "min_pair_normal_angle")?),
        };
        quant.validate()?;
        let subsample = SubsampleParams {
            leaf: f64::from_le_bytes(take(r, "leaf")?),
            normal_cluster_angle: f64::from_le_bytes(take(r, "normal_cluster_angle")?),
            merge_neighbor_clusters: u8::from_le_bytes(take(r, "merge flag")?) != 0,
        };
        let n_points = u64::from_le_bytes(take(r, "point count")?) as usize;
        let diameter = f64::from_le_bytes(take(r, "diameter")?);

        let mut points = Vec::with_capacity(n_points.min(1 << 24));
        let mut normals = Vec::with_capacity(n_points.min(1 << 24));
        for _ in 0..n_points {
            let mut v = [0f64; 6];
            for x in &mut v {
                *x = f32::from_le_bytes(take(r, "point record")?) as f64;
            }
            points.push(Vec3::new(v[0], v[1], v[2]));
            normals.push(Vec3::new(v[3], v[4], v[5]));
        }
        let model = OrientedPointCloud::new(points, normals)
            .map_err(|e| Error::TableFormat(format!("point block: {e}")))?;

        let n_entries = u64::from_le_bytes(take(r, "entry count")?) as usize;
        let mut records = Vec::with_capacity(n_entries.min(1 << 28));
        let max_key = quant.n_dist_bins * quant.n_angle_bins.pow(3);
        for _ in 0..n_entries {
            let key = u32::from_le_bytes(take(r, "entry record")?);
            let ref_index = u32::from_le_bytes(take(r, "entry record")?);
            let alpha = f32::from_le_bytes(take(r, "entry record")?);
            if key >= max_key || ref_index as usize >= n_points {
                return Err(Error::TableFormat(format!(
                    "entry (key {key}, ref {ref_index}) out of range"
                )));
            }
            records.push((key, TableEntry { ref_index, alpha }));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::TableFormat("trailing bytes after entries".into()));
        }
        let frames = model
            .points()
            .iter()
            .zip(model.normals())
            .map(|(p, n)| intermediate_frame(p, n))
            .collect();
        Ok(Self::assemble(model, frames, quant, subsample, diameter, records))
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<ModelTable> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<ModelTable> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TableFormat(format!("truncated at {what}")),
        _ => Error::Io(e),
    })
}

fn take<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b, what)?;
    Ok(b)
}
