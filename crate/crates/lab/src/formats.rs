//! Binary and CSV encodings of tensors, checkpoints, datasets and results.
//!
//! - Tensor: four little-endian `u32` dims `(N, C, H, W)`, then the payload
//!   as little-endian `f64` in row-major order.
//! - Checkpoint: magic `SBN1`, a `u32` array count, then per array a `u32`
//!   name length, the UTF-8 name, a `u64` value count and the values as
//!   little-endian `f64`.
//! - Results CSV: `method,batch_size,noise_pct,seed,metric,value,epochs`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use steinbn::train::{Checkpoint, Dataset, ResultRow, SummaryRow};
use steinbn::Tensor4;

use crate::error::{LabError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SBN1";
pub const RESULTS_HEADER: &str = "method,batch_size,noise_pct,seed,metric,value,epochs";

pub fn encode_tensor(t: &Tensor4) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.len());
    for d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.len() < 16 {
        return Err(LabError::format("tensor", "shorter than the 16-byte header"));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    }
    let payload = &bytes[16..];
    let want = dims.iter().product::<usize>() * 8;
    if payload.len() != want {
        return Err(LabError::format(
            "tensor",
            format!("dims {:?} need {} payload bytes, found {}", dims, want, payload.len()),
        ));
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor4::new(dims, data)?)
}

/// One row per entry: `n,c,h,w,value`.
pub fn tensor_csv(t: &Tensor4) -> String {
    let mut s = String::from("n,c,h,w,value\n");
    for (i, v) in t.data().iter().enumerate() {
        let [n, c, h, w] = t.index_of(i);
        let _ = writeln!(s, "{n},{c},{h},{w},{v:?}");
    }
    s
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(ck.arrays.len() as u32).to_le_bytes());
    for (name, values) in &ck.arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| LabError::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(LabError::format("checkpoint", "missing SBN1 magic"));
    }
    let count = r.u32()?;
    let mut arrays = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| LabError::format("checkpoint", "array name is not UTF-8"))?
            .to_string();
        let n = r.u64()? as usize;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| LabError::format("checkpoint", "array too long"))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push((name, values));
    }
    if r.pos != bytes.len() {
        return Err(LabError::format("checkpoint", "trailing bytes"));
    }
    Ok(Checkpoint { arrays })
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(RESULTS_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| LabError::format("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LabError::format("csv", e.to_string()))
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(LabError::format("results csv", format!("header is {:?}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(LabError::from)).collect()
}

/// Aggregate table in the results schema. Each cell becomes rows with
/// metrics `<metric>_mean`, `<metric>_sd` and `<metric>_n`; `seed` is `*` and
/// `epochs` holds the rounded mean epoch count. A cell with fewer than two
/// seeds is replaced by one `<metric>_warning_fewer_than_2_seeds` row whose
/// value is the seed count.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(RESULTS_HEADER.split(','))?;
    for s in rows {
        let epochs = format!("{}", s.mean_epochs.round() as u64);
        let bs = s.batch_size.to_string();
        let noise = format!("{:?}", s.noise_pct);
        let mut emit = |metric: String, value: String| w.write_record([&s.method, &bs, &noise, "*", &metric, &value, &epochs]);
        match s.sd {
            Some(sd) => {
                emit(format!("{}_mean", s.metric), format!("{:?}", s.mean))?;
                emit(format!("{}_sd", s.metric), format!("{:?}", sd))?;
                emit(format!("{}_n", s.metric), s.n.to_string())?;
            }
            None => emit(format!("{}_warning_fewer_than_2_seeds", s.metric), s.n.to_string())?,
        }
    }
    finish(w)
}

/// Gnuplot data: one block per `(method, batch_size)`, columns
/// `noise_pct mean sd`, blocks separated by two blank lines.
pub fn gnuplot_data(rows: &[SummaryRow]) -> String {
    let mut blocks: BTreeMap<(String, usize, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.sd.is_some()) {
        blocks.entry((r.method.clone(), r.batch_size, r.metric.clone())).or_default().push(r);
    }
    let mut s = String::new();
    for (i, ((method, bs, metric), cell)) in blocks.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# method={method} batch_size={bs} metric={metric}");
        let _ = writeln!(s, "# noise_pct mean sd");
        for r in cell {
            let _ = writeln!(s, "{} {} {}", r.noise_pct, r.mean, r.sd.unwrap_or(0.0));
        }
    }
    s
}

/// Parses `label,px_0,...,px_{D−1}` with `D = C·H·W` and pixels in `[0, 1]`.
/// The class count is one more than the largest label.
pub fn parse_dataset_csv(text: &str, shape: [usize; 3]) -> Result<Dataset> {
    let d: usize = shape.iter().product();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let ok = header.len() == d + 1
        && &header[0] == "label"
        && header.iter().skip(1).enumerate().all(|(i, h)| h == format!("px_{i}"));
    if !ok {
        return Err(LabError::format("dataset csv", format!("header must be label,px_0..px_{}", d - 1)));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| LabError::format("dataset csv", format!("row {}: {}", line + 1, what));
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("label is not a class index"))?);
        for v in rec.iter().skip(1) {
            let x: f64 = v.trim().parse().map_err(|_| bad("pixel is not a number"))?;
            if !(0.0..=1.0).contains(&x) {
                return Err(bad("pixel outside [0, 1]"));
            }
            images.push(x);
        }
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Ok(Dataset::new(images, labels, shape, n_classes)?)
}

/// Noise samples as `index,value`.
pub fn samples_csv(values: &[f64]) -> String {
    let mut s = String::from("index,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:?}");
    }
    s
}
