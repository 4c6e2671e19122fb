//! Dataset directory: `windows.bin` (little-endian header `count, T, width`
//! as u32, then `count * T * width` f32 values) plus `index.csv`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureWindow, Partition, Provenance, WindowSource, FEATURE_WIDTH};
use crate::error::{Error, Result};

pub const WINDOWS_FILE: &str = "windows.bin";
pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndexRow {
    pub index: usize,
    pub source: String,
    pub end_frame: usize,
    pub end_timestamp: f64,
    pub label: Option<u8>,
    pub raw_label: Option<u8>,
    pub provenance: Option<Provenance>,
    pub partition: Option<Partition>,
}

/// Windows read back from a dataset directory. Values have f32 precision.
#[derive(Debug, Clone)]
pub struct StoredDataset {
    pub windows: Vec<FeatureWindow>,
    pub partitions: Vec<Option<Partition>>,
}

pub fn write_dataset(dir: &Path, windows: &[FeatureWindow], partitions: &[Option<Partition>]) -> Result<()> {
    if partitions.len() != windows.len() {
        return Err(Error::Dimension {
            expected: windows.len(),
            found: partitions.len(),
            context: "partitions vs windows",
        });
    }
    let steps = windows.first().map_or(0, |w| w.steps);
    if let Some(w) = windows.iter().find(|w| w.steps != steps || w.rows.len() != steps * FEATURE_WIDTH) {
        return Err(Error::Dimension {
            expected: steps * FEATURE_WIDTH,
            found: w.rows.len(),
            context: "window shape",
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let bin_path = dir.join(WINDOWS_FILE);
    let mut bin = BufWriter::new(File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?);
    let header = [windows.len() as u32, steps as u32, FEATURE_WIDTH as u32];
    let io_err = |e| Error::io(&bin_path, e);
    for h in header {
        bin.write_all(&h.to_le_bytes()).map_err(io_err)?;
    }
    for w in windows {
        for v in &w.rows {
            bin.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    bin.flush().map_err(io_err)?;

    let mut index = csv::Writer::from_path(dir.join(INDEX_FILE))?;
    for (i, (w, p)) in windows.iter().zip(partitions).enumerate() {
        index.serialize(DatasetIndexRow {
            index: i,
            source: w.source.scenario_id.clone(),
            end_frame: w.source.end_frame,
            end_timestamp: w.source.end_timestamp,
            label: w.label,
            raw_label: w.raw_label,
            provenance: w.provenance,
            partition: *p,
        })?;
    }
    index.flush().map_err(|e| Error::io(dir.join(INDEX_FILE), e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let bin_path = dir.join(WINDOWS_FILE);
    let mut bin = BufReader::new(File::open(&bin_path).map_err(|e| Error::io(&bin_path, e))?);
    let count = read_u32(&mut bin, &bin_path)? as usize;
    let steps = read_u32(&mut bin, &bin_path)? as usize;
    let width = read_u32(&mut bin, &bin_path)? as usize;
    if width != FEATURE_WIDTH {
        return Err(Error::Dimension {
            expected: FEATURE_WIDTH,
            found: width,
            context: "dataset feature width",
        });
    }
    let mut raw = vec![0u8; count * steps * width * 4];
    bin.read_exact(&mut raw).map_err(|e| Error::io(&bin_path, e))?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();

    let mut reader = csv::Reader::from_path(dir.join(INDEX_FILE))?;
    let rows: Vec<DatasetIndexRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.len() != count {
        return Err(Error::Dimension {
            expected: count,
            found: rows.len(),
            context: "index rows vs stored windows",
        });
    }
    let stride = steps * width;
    let mut windows = Vec::with_capacity(count);
    let mut partitions = Vec::with_capacity(count);
    for (i, row) in rows.into_iter().enumerate() {
        if row.index != i {
            return Err(Error::Parse {
                path: dir.join(INDEX_FILE),
                line: i + 2,
                message: format!("index {} out of order", row.index),
            });
        }
        windows.push(FeatureWindow {
            rows: values[i * stride..(i + 1) * stride].to_vec(),
            steps,
            label: row.label,
            provenance: row.provenance,
            raw_label: row.raw_label,
            source: WindowSource {
                scenario_id: row.source,
                end_frame: row.end_frame,
                end_timestamp: row.end_timestamp,
            },
        });
        partitions.push(row.partition);
    }
    Ok(StoredDataset { windows, partitions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_directory_round_trip() {
        let windows: Vec<FeatureWindow> = (0..3)
            .map(|i| FeatureWindow {
                rows: (0..2 * FEATURE_WIDTH).map(|j| (i * 1000 + j) as f64 * 0.5).collect(),
                steps: 2,
                label: (i != 1).then_some(i as u8 + 1),
                provenance: (i != 1).then_some(Provenance::True),
                raw_label: Some(2),
                source: WindowSource {
                    scenario_id: format!("clip{i}"),
                    end_frame: 1 + i,
                    end_timestamp: 0.1 * (1 + i) as f64,
                },
            })
            .collect();
        let parts = vec![Some(Partition::TrainTrue), Some(Partition::TrainUnlabeled), None];
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &windows, &parts).unwrap();

        let bytes = fs::read(dir.path().join(WINDOWS_FILE)).unwrap();
        assert_eq!(&bytes[..12], &[3, 0, 0, 0, 2, 0, 0, 0, 46, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 3 * 2 * FEATURE_WIDTH * 4);

        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.windows, windows);
        assert_eq!(back.partitions, parts);
    }
}
