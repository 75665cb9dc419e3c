//! Line-delimited JSON manifests: one labeled, timed utterance per line.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Class;
use crate::segmenter::UtteranceSegment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub session_id: String,
    pub participant_id: String,
    pub seq_no: u32,
    pub t_start: f64,
    pub t_end: f64,
    pub label: Class,
    pub text: String,
}

impl ManifestRecord {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn segment(&self) -> UtteranceSegment {
        UtteranceSegment::new(self.session_id.clone(), self.seq_no, self.t_start, self.t_end)
    }
}

/// Records of one session, ordered by `seq_no`.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub records: Vec<ManifestRecord>,
}

impl Session {
    pub fn segments(&self) -> Vec<UtteranceSegment> {
        self.records.iter().map(ManifestRecord::segment).collect()
    }

    pub fn end_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t_end)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord =
                serde_json::from_str(&line).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::Unreadable { path: path.to_path_buf(), source: e })?;
        Self::parse(BufReader::new(f))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Within each session: positive durations, unique `seq_no`, and
    /// disjoint spans ordered by `seq_no`; one participant per session.
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if !(r.t_start.is_finite() && r.t_end.is_finite() && r.t_end > r.t_start && r.t_start >= 0.0) {
                return Err(Error::Manifest(format!(
                    "{}#{}: bad span [{}, {}]",
                    r.session_id, r.seq_no, r.t_start, r.t_end
                )));
            }
        }
        for s in self.sessions() {
            for w in s.records.windows(2) {
                if w[0].seq_no == w[1].seq_no {
                    return Err(Error::Manifest(format!("{}: duplicate seq_no {}", s.session_id, w[0].seq_no)));
                }
                if w[1].t_start < w[0].t_end {
                    return Err(Error::Manifest(format!(
                        "{}: utterances {} and {} overlap or are out of order",
                        s.session_id, w[0].seq_no, w[1].seq_no
                    )));
                }
                if w[1].participant_id != w[0].participant_id {
                    return Err(Error::Manifest(format!("{}: mixed participants", s.session_id)));
                }
            }
        }
        Ok(())
    }

    /// Sessions sorted by id, records by `seq_no`.
    pub fn sessions(&self) -> Vec<Session> {
        let mut by: BTreeMap<&str, Vec<ManifestRecord>> = BTreeMap::new();
        for r in &self.records {
            by.entry(&r.session_id).or_default().push(r.clone());
        }
        by.into_iter()
            .map(|(id, mut records)| {
                records.sort_by_key(|r| r.seq_no);
                Session {
                    session_id: id.to_string(),
                    participant_id: records[0].participant_id.clone(),
                    records,
                }
            })
            .collect()
    }

    pub fn participants(&self) -> Vec<String> {
        let mut p: Vec<String> = self.records.iter().map(|r| r.participant_id.clone()).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn get(&self, session_id: &str, seq_no: u32) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.session_id == session_id && r.seq_no == seq_no)
    }

    pub fn filter_participants(&self, keep: impl Fn(&str) -> bool) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| keep(&r.participant_id)).cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(session: &str, seq: u32, a: f64, b: f64) -> ManifestRecord {
        ManifestRecord {
            session_id: session.into(),
            participant_id: "P1".into(),
            seq_no: seq,
            t_start: a,
            t_end: b,
            label: Class::Others,
            text: "deuce".into(),
        }
    }

    #[test]
    fn line_format() {
        let m = Manifest::new(vec![rec("s1", 0, 0.5, 1.25)]).unwrap();
        let mut out = Vec::new();
        m.write(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "{\"session_id\":\"s1\",\"participant_id\":\"P1\",\"seq_no\":0,\"t_start\":0.5,\"t_end\":1.25,\"label\":\"others\",\"text\":\"deuce\"}\n"
        );
        assert_eq!(Manifest::parse(&out[..]).unwrap(), m);
    }

    #[test]
    fn rejects_overlap_and_duplicates() {
        assert!(Manifest::new(vec![rec("s", 0, 0.0, 1.0), rec("s", 1, 0.5, 2.0)]).is_err());
        assert!(Manifest::new(vec![rec("s", 0, 0.0, 1.0), rec("s", 0, 2.0, 3.0)]).is_err());
        assert!(Manifest::new(vec![rec("s", 0, 1.0, 1.0)]).is_err());
        assert!(Manifest::parse("{\"nope\":1}\n".as_bytes()).is_err());
    }

    #[test]
    fn sessions_sorted() {
        let m = Manifest::new(vec![rec("b", 1, 3.0, 4.0), rec("a", 0, 0.0, 1.0), rec("b", 0, 0.0, 1.0)]).unwrap();
        let s = m.sessions();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].session_id, "a");
        assert_eq!(s[1].records.iter().map(|r| r.seq_no).collect::<Vec<_>>(), vec![0, 1]);
    }
}
