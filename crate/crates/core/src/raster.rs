//! Minimal single-channel rasters, sampling, smoothing and binary PGM I/O.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type GrayImage = Raster<u8>;
pub type FloatImage = Raster<f32>;

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster buffer size mismatch");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl GrayImage {
    pub fn to_float(&self) -> FloatImage {
        self.map(f32::from)
    }
}

impl FloatImage {
    pub fn to_gray(&self) -> GrayImage {
        self.map(|v| v.round().clamp(0.0, 255.0) as u8)
    }
}

/// Pixel-value access used by the samplers.
pub trait Sample: Copy {
    fn value(self) -> f32;
}

impl Sample for u8 {
    fn value(self) -> f32 {
        self as f32
    }
}

impl Sample for f32 {
    fn value(self) -> f32 {
        self
    }
}

/// Bilinear interpolation at a sub-pixel position, clamping to the border.
pub fn sample_bilinear<T: Sample>(img: &Raster<T>, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, img.width as f64 - 1.0);
    let y = y.clamp(0.0, img.height as f64 - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let top = img.get(x0, y0).value() * (1.0 - fx) + img.get(x1, y0).value() * fx;
    let bottom = img.get(x0, y1).value() * (1.0 - fx) + img.get(x1, y1).value() * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn sample_nearest<T: Sample>(img: &Raster<T>, x: f64, y: f64) -> f32 {
    img.get_clamped(x.round() as isize, y.round() as isize).value()
}

/// Normalized 1D Gaussian kernel truncated at 3σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with replicated borders. `sigma <= 0` is a copy.
pub fn gaussian_blur(img: &FloatImage, sigma: f64) -> FloatImage {
    if sigma <= 0.0 || img.is_empty() {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    Raster::from_vec(w, h, out)
}

/// Writes a binary 8-bit PGM (`P5`). Each comment line is emitted as `# text`.
pub fn write_pgm<W: Write>(mut out: W, img: &GrayImage, comments: &[String]) -> io::Result<()> {
    writeln!(out, "P5")?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    write!(out, "{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.data)?;
    out.flush()
}

pub fn save_pgm(path: impl AsRef<Path>, img: &GrayImage, comments: &[String]) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_pgm(io::BufWriter::new(file), img, comments)
}

fn next_token<R: BufRead>(r: &mut R) -> io::Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated PGM header"));
    }
    Ok(tok)
}

pub fn read_pgm<R: Read>(input: R) -> io::Result<GrayImage> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut r = BufReader::new(input);
    if next_token(&mut r)? != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |s: String| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let width = parse(next_token(&mut r)?)?;
    let height = parse(next_token(&mut r)?)?;
    let maxval = parse(next_token(&mut r)?)?;
    if maxval != 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)?;
    Ok(Raster::from_vec(width, height, data))
}

pub fn load_pgm(path: impl AsRef<Path>) -> io::Result<GrayImage> {
    read_pgm(std::fs::File::open(path)?)
}
