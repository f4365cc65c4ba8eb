//! 8-bit grayscale rasters and the binary PGM format.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary PGM: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: i64, y: i64, value: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.data[y as usize * self.width + x as usize] = value;
        }
    }

    pub fn count(&self, pred: impl Fn(u8) -> bool) -> usize {
        self.data.iter().filter(|&&p| pred(p)).count()
    }

    /// Maps normalized `[0,1]` coordinates to the pixel containing them.
    pub fn to_pixel(&self, u: f64, v: f64) -> (i64, i64) {
        ((u * self.width as f64).floor() as i64, (v * self.height as f64).floor() as i64)
    }

    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), value: u8) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, value);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn line_uv(&mut self, a: (f64, f64), b: (f64, f64), value: u8) {
        let pa = self.to_pixel(a.0, a.1);
        let pb = self.to_pixel(b.0, b.1);
        self.line(pa, pb, value);
    }

    /// Midpoint circle outline.
    pub fn circle(&mut self, (cx, cy): (i64, i64), r: i64, value: u8) {
        let (mut x, mut y, mut d) = (r, 0i64, 1 - r);
        while x >= y {
            for (px, py) in [(x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)] {
                self.set(cx + px, cy + py, value);
            }
            y += 1;
            if d < 0 {
                d += 2 * y + 1;
            } else {
                x -= 1;
                d += 2 * (y - x) + 1;
            }
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, value: u8) {
        for y in y0.max(0)..y1.min(self.height as i64) {
            for x in x0.max(0)..x1.min(self.width as i64) {
                self.set(x, y, value);
            }
        }
    }

    pub fn stroke_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, value: u8) {
        self.line((x0, y0), (x1 - 1, y0), value);
        self.line((x1 - 1, y0), (x1 - 1, y1 - 1), value);
        self.line((x1 - 1, y1 - 1), (x0, y1 - 1), value);
        self.line((x0, y1 - 1), (x0, y0), value);
    }

    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 20);
        self.write_pgm(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_pgm<R: Read>(mut input: R) -> Result<Self, PgmError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_pgm(&bytes)
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, PgmError> {
        let mut pos = 0;
        let mut header = Vec::new();
        while header.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(PgmError::Format("truncated header".into()));
            }
            header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if header[0] != "P5" {
            return Err(PgmError::Format(format!("magic {:?}", header[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| PgmError::Format(e.to_string()));
        let (w, h, max) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
        if max != 255 {
            return Err(PgmError::Format(format!("maxval {max}")));
        }
        let data = bytes
            .get(pos..pos + w * h)
            .ok_or_else(|| PgmError::Format("truncated pixel data".into()))?
            .to_vec();
        Ok(Self { width: w, height: h, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip() {
        let mut img = GrayImage::new(7, 5, 255);
        img.line((0, 0), (6, 4), 0);
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n7 5\n255\n"));
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n\0").is_err());
    }

    #[test]
    fn line_endpoints_are_set() {
        let mut img = GrayImage::new(10, 10, 255);
        img.line((1, 8), (8, 2), 0);
        assert_eq!(img.get(1, 8), 0);
        assert_eq!(img.get(8, 2), 0);
    }

    #[test]
    fn circle_touches_cardinal_points() {
        let mut img = GrayImage::new(21, 21, 255);
        img.circle((10, 10), 6, 0);
        for (x, y) in [(16, 10), (4, 10), (10, 16), (10, 4)] {
            assert_eq!(img.get(x, y), 0);
        }
        assert_eq!(img.get(10, 10), 255);
    }
}
