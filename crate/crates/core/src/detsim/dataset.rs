//! On-disk dataset: one binary image per view per event plus a
//! line-delimited JSON manifest.
//!
//! Image layout (little-endian):
//!
//! ```text
//! b"NPXM" | version u8 = 1 | view u8 (0 = XZ, 1 = YZ) | width u32 | height u32
//! | width * height f32 intensities, row-major
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    event_seed, percentile_scale, project_views, sample_event, smear_and_voxelize, DetectorGeometry,
    DetsimError, DiffusionModel, Event, GeneratorConfig, Normalization, PixelMap, RawView, View,
};
use crate::{EventClass, NUM_CLASSES};

pub const IMAGE_MAGIC: &[u8; 4] = b"NPXM";
pub const IMAGE_VERSION: u8 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4;

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub event_id: u64,
    pub class: EventClass,
    pub neutrino_energy: f64,
    pub vertex: [f64; 3],
    pub xz_file: String,
    pub yz_file: String,
    pub norm_scale: f64,
    pub seed: u64,
    pub raw_energy_xz: f64,
    pub raw_energy_yz: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub record: ManifestRecord,
    pub xz: PixelMap,
    pub yz: PixelMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub events: usize,
    pub class_counts: [usize; NUM_CLASSES],
    pub norm_scale: Option<f64>,
}

impl ManifestSummary {
    fn from_records<'a>(records: impl IntoIterator<Item = &'a ManifestRecord>) -> Self {
        let mut summary = Self {
            events: 0,
            class_counts: [0; NUM_CLASSES],
            norm_scale: None,
        };
        for r in records {
            summary.events += 1;
            summary.class_counts[r.class.index()] += 1;
            summary.norm_scale.get_or_insert(r.norm_scale);
        }
        summary
    }
}

pub fn encode_image(map: &PixelMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * map.intensities.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.push(IMAGE_VERSION);
    buf.push(map.view.tag());
    buf.extend_from_slice(&(map.width as u32).to_le_bytes());
    buf.extend_from_slice(&(map.height as u32).to_le_bytes());
    for v in &map.intensities {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Parses an image; `raw_energy_total` is not stored in the image and is
/// supplied by the caller (from the manifest).
pub fn decode_image(bytes: &[u8], file: &str, raw_energy_total: f64) -> Result<PixelMap, DetsimError> {
    let fail = |offset: usize, reason: String| DetsimError::Format {
        file: file.to_string(),
        offset,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != IMAGE_MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != IMAGE_VERSION {
        return Err(fail(4, format!("unsupported version {}", bytes[4])));
    }
    let view = View::from_tag(bytes[5]).ok_or_else(|| fail(5, format!("unknown view tag {}", bytes[5])))?;
    let width = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    if width == 0 || height == 0 {
        return Err(fail(6, format!("zero dimension {width}x{height}")));
    }
    let expected = HEADER_LEN + 4 * width * height;
    if bytes.len() != expected {
        return Err(fail(
            HEADER_LEN,
            format!("{width}x{height} image needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let intensities = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(PixelMap::new(view, width, height, intensities, raw_energy_total))
}

pub fn image_file_name(event_id: u64, view: View) -> String {
    format!("images/{event_id:07}_{}.npxm", view.suffix())
}

/// Streams events into a dataset directory, appending one manifest line per event.
pub struct DatasetWriter {
    dir: PathBuf,
    manifest: BufWriter<File>,
    records: Vec<ManifestRecord>,
}

impl DatasetWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self, DetsimError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("images")).map_err(|e| DetsimError::io(&dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let file = File::create(&path).map_err(|e| DetsimError::io(&path, e))?;
        Ok(Self {
            dir,
            manifest: BufWriter::new(file),
            records: Vec::new(),
        })
    }

    pub fn append(
        &mut self,
        event: &Event,
        xz: &PixelMap,
        yz: &PixelMap,
        norm: &Normalization,
    ) -> Result<&ManifestRecord, DetsimError> {
        let record = ManifestRecord {
            event_id: event.event_id,
            class: event.truth_class,
            neutrino_energy: event.neutrino_energy,
            vertex: event.vertex,
            xz_file: image_file_name(event.event_id, View::XZ),
            yz_file: image_file_name(event.event_id, View::YZ),
            norm_scale: norm.scale,
            seed: event.seed,
            raw_energy_xz: xz.raw_energy_total,
            raw_energy_yz: yz.raw_energy_total,
        };
        for (name, map) in [(&record.xz_file, xz), (&record.yz_file, yz)] {
            let path = self.dir.join(name);
            fs::write(&path, encode_image(map)).map_err(|e| DetsimError::io(&path, e))?;
        }
        let line = serde_json::to_string(&record).expect("manifest record serialises");
        writeln!(self.manifest, "{line}").map_err(|e| DetsimError::io(&self.dir, e))?;
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn finish(mut self) -> Result<ManifestSummary, DetsimError> {
        self.manifest.flush().map_err(|e| DetsimError::io(&self.dir, e))?;
        Ok(ManifestSummary::from_records(&self.records))
    }
}

/// Writes a complete in-memory dataset.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    events: &[(Event, PixelMap, PixelMap)],
    norm: &Normalization,
) -> Result<ManifestSummary, DetsimError> {
    let mut writer = DatasetWriter::create(dir)?;
    for (ev, xz, yz) in events {
        writer.append(ev, xz, yz, norm)?;
    }
    writer.finish()
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestRecord>, DetsimError> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let file = File::open(&path).map_err(|e| DetsimError::io(&path, e))?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DetsimError::io(&path, e))?;
        let record = serde_json::from_str(&line).map_err(|e| DetsimError::Format {
            file: path.display().to_string(),
            offset: offset + e.column().saturating_sub(1),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        offset += line.len() + 1;
        records.push(record);
    }
    Ok(records)
}

pub fn load_entry(dir: impl AsRef<Path>, record: &ManifestRecord) -> Result<DatasetEntry, DetsimError> {
    let dir = dir.as_ref();
    let load = |name: &str, raw: f64, expect: View| -> Result<PixelMap, DetsimError> {
        let path = dir.join(name);
        let mut bytes = Vec::new();
        File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| DetsimError::io(&path, e))?;
        let map = decode_image(&bytes, &path.display().to_string(), raw)?;
        if map.view != expect {
            return Err(DetsimError::Format {
                file: path.display().to_string(),
                offset: 5,
                reason: format!("expected {expect:?} view, found {:?}", map.view),
            });
        }
        Ok(map)
    };
    Ok(DatasetEntry {
        record: record.clone(),
        xz: load(&record.xz_file, record.raw_energy_xz, View::XZ)?,
        yz: load(&record.yz_file, record.raw_energy_yz, View::YZ)?,
    })
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(ManifestSummary, Vec<DatasetEntry>), DetsimError> {
    let dir = dir.as_ref();
    let records = read_manifest(dir)?;
    let entries = records
        .par_iter()
        .map(|r| load_entry(dir, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ManifestSummary::from_records(&records), entries))
}

/// Exact per-class counts from (unnormalised) priors by largest remainder.
pub fn class_counts(events: usize, priors: [f64; NUM_CLASSES]) -> Result<[usize; NUM_CLASSES], DetsimError> {
    let total: f64 = priors.iter().sum();
    if priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || !(total > 0.0) {
        return Err(DetsimError::Generator(format!(
            "class priors must be non-negative with a positive sum, got {priors:?}"
        )));
    }
    let quotas: Vec<f64> = priors.iter().map(|p| p / total * events as f64).collect();
    let mut counts: [usize; NUM_CLASSES] = std::array::from_fn(|c| quotas[c].floor() as usize);
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = events - counts.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if priors[c] > 0.0 {
            counts[c] += 1;
            remaining -= 1;
        }
    }
    Ok(counts)
}

/// Deterministic class for every event index: exact counts, seeded shuffle.
pub fn assign_classes(events: usize, priors: [f64; NUM_CLASSES], seed: u64) -> Result<Vec<EventClass>, DetsimError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let counts = class_counts(events, priors)?;
    let mut classes: Vec<EventClass> = EventClass::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(event_seed(seed, u64::MAX));
    classes.shuffle(&mut rng);
    Ok(classes)
}

/// Settings for generating a labelled dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSpec {
    pub seed: u64,
    pub events: usize,
    pub priors: [f64; NUM_CLASSES],
    pub calibration_events: usize,
    pub percentile: f64,
    pub generator: GeneratorConfig,
    pub diffusion: DiffusionModel,
    pub geometry: DetectorGeometry,
}

impl GenerationSpec {
    pub fn desk(seed: u64, events: usize) -> Self {
        Self {
            seed,
            events,
            priors: [1.0; NUM_CLASSES],
            calibration_events: 1000,
            percentile: 99.5,
            generator: GeneratorConfig::default(),
            diffusion: DiffusionModel::default(),
            geometry: DetectorGeometry::desk(),
        }
    }
}

/// Simulates one event end to end and returns its raw views.
pub fn simulate_event(
    event_id: u64,
    seed: u64,
    class: EventClass,
    spec: &GenerationSpec,
) -> Result<(Event, RawView, RawView), DetsimError> {
    let event = sample_event(event_id, seed, class, &spec.generator, &spec.geometry)?;
    let grid = smear_and_voxelize(&event.deposits, &spec.diffusion, &spec.geometry)?;
    let (xz, yz) = project_views(&grid, event.vertex, &spec.geometry)?;
    Ok((event, xz, yz))
}

/// Percentile scale from a dedicated calibration run with balanced classes,
/// drawn from a seed stream disjoint from the dataset's.
pub fn calibrate(spec: &GenerationSpec) -> Result<Normalization, DetsimError> {
    let n = spec.calibration_events.max(1);
    let calib_seed = event_seed(spec.seed, 0xCA11_B8A7E);
    let views = (0..n)
        .into_par_iter()
        .map(|i| {
            let class = EventClass::ALL[i % NUM_CLASSES];
            simulate_event(i as u64, event_seed(calib_seed, i as u64), class, spec).map(|(_, xz, yz)| [xz, yz])
        })
        .collect::<Result<Vec<_>, _>>()?;
    Normalization::new(percentile_scale(views.iter().flatten(), spec.percentile)?)
}

/// Generates, normalises and writes a dataset in fixed-size chunks. The
/// content depends only on the spec, not on thread count.
pub fn generate_dataset(spec: &GenerationSpec, dir: impl AsRef<Path>) -> Result<ManifestSummary, DetsimError> {
    spec.geometry.validate()?;
    spec.diffusion.validate()?;
    spec.generator.validate(&spec.geometry)?;
    let classes = assign_classes(spec.events, spec.priors, spec.seed)?;
    let norm = calibrate(spec)?;
    let mut writer = DatasetWriter::create(dir)?;
    const CHUNK: usize = 256;
    for start in (0..spec.events).step_by(CHUNK) {
        let end = (start + CHUNK).min(spec.events);
        let batch = (start..end)
            .into_par_iter()
            .map(|i| simulate_event(i as u64, event_seed(spec.seed, i as u64), classes[i], spec))
            .collect::<Result<Vec<_>, _>>()?;
        for (event, xz, yz) in batch {
            writer.append(&event, &norm.apply(&xz), &norm.apply(&yz), &norm)?;
        }
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_priors_exactly() {
        assert_eq!(class_counts(3600, [1.0, 1.0, 1.0]).unwrap(), [1200, 1200, 1200]);
        assert_eq!(class_counts(10, [1.0, 1.0, 1.0]).unwrap(), [4, 3, 3]);
        assert_eq!(class_counts(100, [0.37, 0.37, 0.26]).unwrap(), [37, 37, 26]);
        assert_eq!(class_counts(7, [1.0, 0.0, 1.0]).unwrap(), [4, 0, 3]);
        assert!(class_counts(10, [0.0, 0.0, 0.0]).is_err());
        let classes = assign_classes(99, [2.0, 1.0, 0.0], 5).unwrap();
        assert_eq!(classes.iter().filter(|c| **c == EventClass::NuECC).count(), 66);
        assert_eq!(classes.iter().filter(|c| **c == EventClass::NC).count(), 0);
    }

    #[test]
    fn image_header_is_checked() {
        let map = PixelMap::new(View::YZ, 3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.125, 0.0], 1.0);
        let bytes = encode_image(&map);
        assert_eq!(&bytes[..6], b"NPXM\x01\x01");
        assert_eq!(decode_image(&bytes, "a", 1.0).unwrap(), map);

        let mut bad = bytes.clone();
        bad[1] = b'Q';
        let err = decode_image(&bad, "evt.npxm", 1.0).unwrap_err().to_string();
        assert!(err.contains("evt.npxm") && err.contains("offset 0"), "{err}");

        let err = decode_image(&bytes[..bytes.len() - 1], "short.npxm", 1.0).unwrap_err();
        assert!(matches!(err, DetsimError::Format { offset: 14, .. }));
    }
}
