//! Dataset generation and the `manifest.json` + `v<id>.muvt` directory layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{self, header_len};
use super::render::{render_video, GenerateSpec};
use super::{SynthError, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    UnlabeledTrain,
    NovelTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: u64,
    /// Byte offset of the payload inside `v<id>.muvt`.
    pub file_offset: u64,
    pub appearance_class: usize,
    pub motion_class: usize,
    pub joint_class: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: GenerateSpec,
    pub joint_classes: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut ids: Vec<u64> = self.entries.iter().map(|e| e.video_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SynthError::Manifest("duplicate video_id".into()));
        }
        let train: std::collections::BTreeSet<usize> =
            self.entries_in(Split::UnlabeledTrain).map(|e| e.joint_class).collect();
        if self.entries_in(Split::NovelTest).any(|e| train.contains(&e.joint_class)) {
            return Err(SynthError::Manifest("novel-test class also appears in training".into()));
        }
        Ok(())
    }
}

/// Joint classes on one colour of a checkerboard over (appearance, motion)
/// are held out, so every novel class combines factors seen during training
/// in a combination that never was.
pub fn split_of(appearance: usize, motion: usize) -> Split {
    if (appearance + motion) % 2 == 1 {
        Split::NovelTest
    } else {
        Split::UnlabeledTrain
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<VideoTensor>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&VideoTensor> {
        self.manifest
            .entries
            .iter()
            .zip(&self.videos)
            .filter(|(e, _)| e.split == split)
            .map(|(_, v)| v)
            .collect()
    }
}

pub fn generate_dataset(spec: &GenerateSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let mut entries = Vec::with_capacity(spec.joint_classes() * spec.videos_per_class);
    let mut videos = Vec::with_capacity(entries.capacity());
    let mut next_id = 0u64;
    for a in 0..spec.appearance_classes {
        for m in 0..spec.motion_classes {
            for _ in 0..spec.videos_per_class {
                let v = render_video(spec, next_id, a, m);
                entries.push(ManifestEntry {
                    video_id: next_id,
                    file_offset: header_len(4) as u64,
                    appearance_class: a,
                    motion_class: m,
                    joint_class: v.joint_class,
                    split: split_of(a, m),
                });
                videos.push(v);
                next_id += 1;
            }
        }
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            spec: spec.clone(),
            joint_classes: spec.joint_classes(),
            entries,
        },
        videos,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn video_file_name(id: u64) -> String {
    format!("v{id}.muvt")
}

/// Write the dataset into `dir`, which is created if absent (its parent must
/// exist).
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), SynthError> {
    match fs::create_dir(dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && dir.is_dir() => {}
        Err(e) => return Err(io_err(dir)(e)),
    }
    for v in &ds.videos {
        let bytes = io::encode_f32(&v.shape(), &v.frames)?;
        io::write_bytes(&dir.join(video_file_name(v.video_id)), &bytes)?;
    }
    let json = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    let path = dir.join("manifest.json");
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, SynthError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))?;
    m.validate()?;
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let manifest = read_manifest(dir)?;
    let spec = &manifest.spec;
    let want = [spec.frames, spec.channels, spec.height, spec.width];
    let mut videos = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let raw = io::read_raw(&dir.join(video_file_name(e.video_id)))?;
        if raw.shape != want {
            return Err(SynthError::Manifest(format!(
                "video {} has shape {:?}, manifest says {:?}",
                e.video_id, raw.shape, want
            )));
        }
        videos.push(VideoTensor {
            frames: raw.to_f32(),
            t: want[0],
            c: want[1],
            h: want[2],
            w: want[3],
            video_id: e.video_id,
            appearance_class: e.appearance_class,
            motion_class: e.motion_class,
            joint_class: e.joint_class,
        });
    }
    Ok(Dataset { manifest, videos })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GenerateSpec {
        GenerateSpec {
            appearance_classes: 2,
            motion_classes: 2,
            videos_per_class: 10,
            frames: 8,
            height: 16,
            width: 16,
            seed,
            ..GenerateSpec::default()
        }
    }

    #[test]
    fn counts_and_classes() {
        let ds = generate_dataset(&small(1)).unwrap();
        assert_eq!(ds.videos.len(), 40);
        assert_eq!(ds.manifest.joint_classes, 4);
        let joint: std::collections::BTreeSet<_> = ds.manifest.entries.iter().map(|e| e.joint_class).collect();
        assert_eq!(joint.len(), 4);
        ds.manifest.validate().unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_dataset(&generate_dataset(&small(4)).unwrap(), &d1.path().join("a")).unwrap();
        write_dataset(&generate_dataset(&small(4)).unwrap(), &d2.path().join("a")).unwrap();
        let mut names: Vec<_> = fs::read_dir(d1.path().join("a"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 41);
        for n in names {
            let a = fs::read(d1.path().join("a").join(&n)).unwrap();
            let b = fs::read(d2.path().join("a").join(&n)).unwrap();
            assert_eq!(a, b, "{n:?}");
        }
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small(2)).unwrap();
        write_dataset(&ds, &dir.path().join("d")).unwrap();
        let back = read_dataset(&dir.path().join("d")).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.videos, ds.videos);
        let bytes = fs::read(dir.path().join("d").join("v3.muvt")).unwrap();
        let off = ds.manifest.entries[3].file_offset as usize;
        let first = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        assert_eq!(first, ds.videos[3].frames[0]);
    }

    #[test]
    fn missing_parent_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_dataset(&generate_dataset(&small(2)).unwrap(), &dir.path().join("x/y")).unwrap_err();
        assert!(matches!(err, SynthError::Io { .. }));
    }

    #[test]
    fn novel_classes_are_disjoint() {
        let ds = generate_dataset(&GenerateSpec {
            videos_per_class: 1,
            frames: 4,
            ..GenerateSpec::default()
        })
        .unwrap();
        let novel = ds.manifest.entries_in(Split::NovelTest).count();
        assert_eq!(novel, 32);
        ds.manifest.validate().unwrap();
    }
}
