//! Stream elements and single-pass streams.
//!
//! A [`Point`] carries an id, a payload and (optionally) a hidden class
//! label. Everything that makes selection decisions only ever sees a
//! [`PointView`], which has no accessor for the label: the label is revealed
//! by the engine once the point has been selected.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::CoreError;

/// Tolerance on the sum of a probability payload.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Feature payload of a point.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Raw real-valued features; dimension is fixed per stream.
    Features(Vec<f64>),
    /// Precomputed class-probability vector of length K.
    Probs(Vec<f64>),
}

impl Payload {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Payload::Features(v) | Payload::Probs(v) => v,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Features(_) => "features",
            Payload::Probs(_) => "probs",
        }
    }
}

/// One stream element.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    id: u64,
    payload: Payload,
    label: Option<usize>,
}

impl Point {
    pub fn with_features(id: u64, features: Vec<f64>) -> Self {
        Point {
            id,
            payload: Payload::Features(features),
            label: None,
        }
    }

    /// Builds a point from a class-probability vector, validating that the
    /// entries lie in `[0, 1]` and sum to one.
    pub fn with_probs(id: u64, probs: Vec<f64>) -> Result<Self, CoreError> {
        validate_probabilities(id, &probs)?;
        Ok(Point {
            id,
            payload: Payload::Probs(probs),
            label: None,
        })
    }

    /// Attaches the hidden label.
    pub fn labeled(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    /// Queries the hidden label. The engine calls this only for points it
    /// has just selected; offline tools (oracle, property checks, dataset
    /// statistics) may call it freely.
    pub fn reveal_label(&self) -> Option<usize> {
        self.label
    }

    /// Label-free view handed to schedules and gain computations.
    pub fn view(&self) -> PointView<'_> {
        PointView { point: self }
    }
}

/// A borrowed, label-free view of a [`Point`].
#[derive(Clone, Copy, Debug)]
pub struct PointView<'a> {
    point: &'a Point,
}

impl<'a> PointView<'a> {
    pub fn id(&self) -> u64 {
        self.point.id
    }

    pub fn payload(&self) -> &'a Payload {
        &self.point.payload
    }

    pub fn features(&self) -> Option<&'a [f64]> {
        match &self.point.payload {
            Payload::Features(v) => Some(v),
            Payload::Probs(_) => None,
        }
    }

    pub fn probs(&self) -> Option<&'a [f64]> {
        match &self.point.payload {
            Payload::Probs(v) => Some(v),
            Payload::Features(_) => None,
        }
    }

    /// Copies the point without its label.
    pub fn to_unlabeled(&self) -> Point {
        Point {
            id: self.point.id,
            payload: self.point.payload.clone(),
            label: None,
        }
    }
}

pub(crate) fn validate_probabilities(id: u64, probs: &[f64]) -> Result<(), CoreError> {
    if probs.is_empty() {
        return Err(CoreError::InvalidProbabilities {
            id,
            reason: "empty vector".into(),
        });
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CoreError::InvalidProbabilities {
            id,
            reason: format!("entry {p} outside [0, 1]"),
        });
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(CoreError::InvalidProbabilities {
            id,
            reason: format!("entries sum to {sum}"),
        });
    }
    Ok(())
}

/// Where a stream's points come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    Memory,
    File(PathBuf),
    Generated { seed: u64 },
}

impl fmt::Display for StreamSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamSource::Memory => write!(f, "memory"),
            StreamSource::File(p) => write!(f, "file:{}", p.display()),
            StreamSource::Generated { seed } => write!(f, "generated(seed={seed})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("I/O error reading line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Point {
        line: usize,
        #[source]
        source: CoreError,
    },
    #[error("ids must be strictly increasing: {id} follows {previous}")]
    Order { previous: u64, id: u64 },
    #[error("payload dimension {found} differs from the stream's dimension {expected} (point {id})")]
    Dimension { id: u64, expected: usize, found: usize },
}

type PointIter = Box<dyn Iterator<Item = Result<Point, StreamError>> + Send>;

/// A single-pass, forward-only sequence of points.
///
/// Ids must be strictly increasing and payloads must share one dimension;
/// a violation surfaces as an error item and ends the stream.
pub struct Stream {
    source: StreamSource,
    inner: PointIter,
    len_hint: Option<usize>,
    last_id: Option<u64>,
    dimension: Option<usize>,
    failed: bool,
}

impl fmt::Debug for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stream")
            .field("source", &self.source)
            .field("len_hint", &self.len_hint)
            .finish_non_exhaustive()
    }
}

impl Stream {
    pub fn new<I>(source: StreamSource, points: I) -> Self
    where
        I: IntoIterator<Item = Result<Point, StreamError>>,
        I::IntoIter: Send + 'static,
    {
        Stream {
            source,
            inner: Box::new(points.into_iter()),
            len_hint: None,
            last_id: None,
            dimension: None,
            failed: false,
        }
    }

    pub fn from_points(points: Vec<Point>) -> Self {
        let n = points.len();
        let mut s = Stream::new(StreamSource::Memory, points.into_iter().map(Ok));
        s.len_hint = Some(n);
        s
    }

    pub fn generated(seed: u64, points: Vec<Point>) -> Self {
        let mut s = Stream::from_points(points);
        s.source = StreamSource::Generated { seed };
        s
    }

    /// Opens a JSONL stream file. Lines are parsed lazily.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StreamError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|source| StreamError::Io { line: 0, source })?;
        let reader = BufReader::new(file);
        let lines = reader
            .lines()
            .enumerate()
            .filter_map(|(i, line)| match line {
                Ok(l) if l.trim().is_empty() => None,
                Ok(l) => Some(parse_point_line(i + 1, &l)),
                Err(source) => Some(Err(StreamError::Io { line: i + 1, source })),
            });
        Ok(Stream::new(StreamSource::File(path), lines))
    }

    pub fn source(&self) -> &StreamSource {
        &self.source
    }

    pub fn len_hint(&self) -> Option<usize> {
        self.len_hint
    }
}

impl Iterator for Stream {
    type Item = Result<Point, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.inner.next()?;
        let checked = item.and_then(|p| {
            if let Some(prev) = self.last_id {
                if p.id <= prev {
                    return Err(StreamError::Order { previous: prev, id: p.id });
                }
            }
            let dim = p.payload.as_slice().len();
            match self.dimension {
                Some(expected) if expected != dim => {
                    return Err(StreamError::Dimension { id: p.id, expected, found: dim })
                }
                None => self.dimension = Some(dim),
                _ => {}
            }
            self.last_id = Some(p.id);
            Ok(p)
        });
        if checked.is_err() {
            self.failed = true;
        }
        Some(checked)
    }
}

/// One line of a stream file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointLine {
    id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

pub(crate) fn parse_point_line(line: usize, text: &str) -> Result<Point, StreamError> {
    let rec: PointLine = serde_json::from_str(text).map_err(|e| StreamError::Parse {
        line,
        message: e.to_string(),
    })?;
    let point = match (rec.probs, rec.features) {
        (Some(p), None) => {
            Point::with_probs(rec.id, p).map_err(|source| StreamError::Point { line, source })?
        }
        (None, Some(f)) => Point::with_features(rec.id, f),
        _ => {
            return Err(StreamError::Parse {
                line,
                message: "exactly one of `probs` or `features` is required".into(),
            })
        }
    };
    Ok(match rec.label {
        Some(l) => point.labeled(l),
        None => point,
    })
}

/// Serializes one point as a stream-file line (no trailing newline).
pub fn point_to_line(p: &Point) -> String {
    let (probs, features) = match &p.payload {
        Payload::Probs(v) => (Some(v.clone()), None),
        Payload::Features(v) => (None, Some(v.clone())),
    };
    let rec = PointLine {
        id: p.id,
        probs,
        features,
        label: p.label,
    };
    serde_json::to_string(&rec).expect("point serialization is infallible")
}

pub fn write_points<W: Write>(mut out: W, points: &[Point]) -> io::Result<()> {
    for p in points {
        writeln!(out, "{}", point_to_line(p))?;
    }
    Ok(())
}

/// Reads a whole stream file into memory (offline tools only).
pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<Point>, StreamError> {
    Stream::open(path)?.collect()
}
