//! Little-endian wire encodings for every payload kind.
//!
//! | payload          | layout                                                        |
//! |------------------|---------------------------------------------------------------|
//! | point            | 4 × f32: x, y, z, intensity (16 bytes)                        |
//! | box              | 7 × f32: x, y, z, w, l, h, yaw; u8 category; f32 score (33 B) |
//! | raw grid         | `rows·cols·channels` × f32, row-major, channels innermost     |
//! | compressed grid  | header, then alternating zero-run / literal-run blocks        |
//!
//! Compressed grid header (94 bytes for 3 channels):
//! `i32 cols, i32 rows, i32 channels, u8 frame, u8 kind, f64 x0, f64 y0,
//! f64 cell_size, f64 timestamp`, then per channel `f64 min, f64 max`.
//! The body is a sequence of blocks `varint zero_cells, varint literal_cells,
//! literal_cells × channels × u8`, where zero cells have every channel exactly
//! 0 and literal channels are quantized linearly to 8 bits between the
//! channel's min and max. Varints are unsigned LEB128.

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::{Box3D, Category};
use crate::sensing::{FeatureFlow, FeatureGrid, Frame, GridSpec, Point, PointCloud};

pub const POINT_BYTES: usize = 16;
pub const BOX_BYTES: usize = 33;

pub fn grid_header_bytes(channels: usize) -> usize {
    3 * 4 + 2 + 4 * 8 + channels * 16
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut out = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            out |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(out);
            }
        }
        Err(Error::Decode("varint overflow".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

pub fn encode_points(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.points.len() * POINT_BYTES);
    for p in &pc.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_points(buf: &[u8], frame: Frame, timestamp: f64) -> Result<PointCloud> {
    if buf.len() % POINT_BYTES != 0 {
        return Err(Error::Decode(format!("{} bytes is not a whole number of points", buf.len())));
    }
    let mut r = Reader::new(buf);
    let mut points = Vec::with_capacity(buf.len() / POINT_BYTES);
    while !r.done() {
        points.push(Point {
            x: r.f32()? as f64,
            y: r.f32()? as f64,
            z: r.f32()? as f64,
            intensity: r.f32()? as f64,
        });
    }
    Ok(PointCloud { points, frame, timestamp })
}

pub fn encode_detections(dets: &[Detection]) -> Vec<u8> {
    let mut out = Vec::with_capacity(dets.len() * BOX_BYTES);
    for d in dets {
        let b = &d.bbox;
        for v in [b.x, b.y, b.z, b.w, b.l, b.h, b.yaw] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.push(b.category.code());
        out.extend_from_slice(&(d.score as f32).to_le_bytes());
    }
    out
}

pub fn decode_detections(buf: &[u8]) -> Result<Vec<Detection>> {
    if buf.len() % BOX_BYTES != 0 {
        return Err(Error::Decode(format!("{} bytes is not a whole number of boxes", buf.len())));
    }
    let mut r = Reader::new(buf);
    let mut out = Vec::with_capacity(buf.len() / BOX_BYTES);
    while !r.done() {
        let mut f = [0.0f64; 7];
        for v in f.iter_mut() {
            *v = r.f32()? as f64;
        }
        let code = r.u8()?;
        let category =
            Category::from_code(code).ok_or_else(|| Error::Decode(format!("unknown category {code}")))?;
        let score = r.f32()? as f64;
        out.push(Detection {
            bbox: Box3D {
                x: f[0],
                y: f[1],
                z: f[2],
                w: f[3],
                l: f[4],
                h: f[5],
                yaw: f[6],
                category,
            },
            score,
        });
    }
    Ok(out)
}

pub fn encode_raw_grid(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw_grid(buf: &[u8], spec: &GridSpec) -> Result<Vec<f64>> {
    if buf.len() != spec.len() * 4 {
        return Err(Error::Decode(format!(
            "raw grid has {} bytes, spec needs {}",
            buf.len(),
            spec.len() * 4
        )));
    }
    let mut r = Reader::new(buf);
    (0..spec.len()).map(|_| Ok(r.f32()? as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Feature,
    Flow,
}

/// A decoded compressed grid.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodedGrid {
    Feature(FeatureGrid),
    Flow(FeatureFlow),
}

impl DecodedGrid {
    pub fn spec(&self) -> &GridSpec {
        match self {
            DecodedGrid::Feature(g) => &g.spec,
            DecodedGrid::Flow(f) => &f.spec,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            DecodedGrid::Feature(g) => &g.values,
            DecodedGrid::Flow(f) => &f.values,
        }
    }
}

pub fn compress(
    spec: &GridSpec,
    values: &[f64],
    timestamp: f64,
    frame: Frame,
    kind: GridKind,
) -> Vec<u8> {
    let ch = spec.channels;
    let mut out = Vec::with_capacity(grid_header_bytes(ch) + 64);
    for v in [spec.cols as i32, spec.rows as i32, ch as i32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(frame.code() as u8);
    out.push(match kind {
        GridKind::Feature => 0,
        GridKind::Flow => 1,
    });
    for v in [spec.x0, spec.y0, spec.cell_size, timestamp] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); ch];
    for cell in values.chunks_exact(ch) {
        for (b, &v) in bounds.iter_mut().zip(cell) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
    }
    for b in bounds.iter_mut() {
        if b.0 > b.1 {
            *b = (0.0, 0.0);
        }
        out.extend_from_slice(&b.0.to_le_bytes());
        out.extend_from_slice(&b.1.to_le_bytes());
    }

    let is_zero = |cell: &[f64]| cell.iter().all(|&v| v == 0.0);
    let cells: Vec<&[f64]> = values.chunks_exact(ch).collect();
    let mut i = 0;
    while i < cells.len() {
        let zs = i;
        while i < cells.len() && is_zero(cells[i]) {
            i += 1;
        }
        let ls = i;
        while i < cells.len() && !is_zero(cells[i]) {
            i += 1;
        }
        put_varint(&mut out, (ls - zs) as u64);
        put_varint(&mut out, (i - ls) as u64);
        for cell in &cells[ls..i] {
            for (&v, &(lo, hi)) in cell.iter().zip(&bounds) {
                let q = if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                };
                out.push(q);
            }
        }
    }
    out
}

pub fn decompress(buf: &[u8]) -> Result<DecodedGrid> {
    let mut r = Reader::new(buf);
    let cols = r.i32()?;
    let rows = r.i32()?;
    let channels = r.i32()?;
    if cols <= 0 || rows <= 0 || channels <= 0 {
        return Err(Error::Decode(format!("bad grid shape {cols}×{rows}×{channels}")));
    }
    let frame_code = r.u8()?;
    let frame = Frame::from_code(frame_code as i32)
        .ok_or_else(|| Error::Decode(format!("unknown frame tag {frame_code}")))?;
    let kind = match r.u8()? {
        0 => GridKind::Feature,
        1 => GridKind::Flow,
        k => return Err(Error::Decode(format!("unknown grid kind {k}"))),
    };
    let x0 = r.f64()?;
    let y0 = r.f64()?;
    let cell_size = r.f64()?;
    let timestamp = r.f64()?;
    let spec = GridSpec {
        x0,
        y0,
        cell_size,
        cols: cols as usize,
        rows: rows as usize,
        channels: channels as usize,
    };
    let ch = spec.channels;
    let mut bounds = Vec::with_capacity(ch);
    for _ in 0..ch {
        bounds.push((r.f64()?, r.f64()?));
    }
    let n_cells = spec.num_cells();
    let mut values = vec![0.0f64; spec.len()];
    let mut cell = 0usize;
    while cell < n_cells {
        let zeros = r.varint()? as usize;
        let literals = r.varint()? as usize;
        if zeros == 0 && literals == 0 {
            return Err(Error::Decode("empty run block".into()));
        }
        cell = cell
            .checked_add(zeros)
            .filter(|&c| c <= n_cells)
            .ok_or_else(|| Error::Decode("zero run overflows grid".into()))?;
        if cell + literals > n_cells {
            return Err(Error::Decode("literal run overflows grid".into()));
        }
        let bytes = r.take(literals * ch)?;
        for (j, q) in bytes.iter().enumerate() {
            let c = j % ch;
            let (lo, hi) = bounds[c];
            values[cell * ch + j] = if hi > lo { lo + (*q as f64) / 255.0 * (hi - lo) } else { lo };
        }
        cell += literals;
    }
    if !r.done() {
        return Err(Error::Decode(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(match kind {
        GridKind::Feature => DecodedGrid::Feature(FeatureGrid { spec, values, timestamp, frame }),
        GridKind::Flow => DecodedGrid::Flow(FeatureFlow { spec, values, timestamp, frame }),
    })
}
