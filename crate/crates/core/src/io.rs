//! Little-endian binary files for snapshots, bases, tensors and DEIM operators.
//!
//! Every file starts with an 8-byte magic: `SWESNAP1`, `PODBAS1\0`,
//! `TPODCF1\0` or `DEIMOP1\0`; the trailing digit is the format version.
//! Integers are `u64`, reals `f64`, matrices column-major.
//!
//! Snapshot layout:
//!
//! ```text
//! magic[8] nx ny n nt dt length_x length_y flags
//! times[nt]
//! u v phi          (n*nt each, if flags & 1)
//! F11 .. F32       (n*nt each, if flags & 2)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::deim::{DeimOperator, SampledProduct};
use crate::error::{Result, RomError};
use crate::grid::Grid;
use crate::pod::PodBasis;
use crate::rom::{ProductTensor, ReducedCoriolis, TensorCoefficients, TermTensors};
use crate::solver::{RecordFlags, SnapshotSet};
use crate::swe::{NonlinearTerm, Var};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"SWESNAP1";
pub const BASIS_MAGIC: &[u8; 8] = b"PODBAS1\0";
pub const TENSOR_MAGIC: &[u8; 8] = b"TPODCF1\0";
pub const DEIM_MAGIC: &[u8; 8] = b"DEIMOP1\0";

// Refuses absurd sizes from corrupt headers before allocating.
const MAX_ELEMS: u64 = 1 << 34;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(v.len() * 8);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.bytes(&buf)
    }

    fn matrix(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.f64s(m.as_slice())
    }

    fn vector(&mut self, v: &DVector<f64>) -> Result<()> {
        self.f64s(v.as_slice())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                RomError::Format("file is truncated".into())
            } else {
                RomError::Io(e)
            }
        })
    }

    fn magic(&mut self, want: &[u8; 8]) -> Result<()> {
        let mut got = [0u8; 8];
        self.bytes(&mut got)?;
        if &got == want {
            return Ok(());
        }
        let stem = want.iter().position(|c| c.is_ascii_digit()).unwrap_or(8);
        if got[..stem] == want[..stem] {
            Err(RomError::Version(format!(
                "{} (expected {})",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(want)
            )))
        } else {
            Err(RomError::Format(format!("bad magic {:?}", String::from_utf8_lossy(&got))))
        }
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_ELEMS {
            return Err(RomError::Format(format!("implausible size {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        if len as u64 > MAX_ELEMS {
            return Err(RomError::Format(format!("implausible length {len}")));
        }
        let mut buf = vec![0u8; len * 8];
        self.bytes(&mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| RomError::Format("matrix size overflows".into()))?;
        Ok(DMatrix::from_vec(rows, cols, self.f64s(len)?))
    }

    fn vector(&mut self, len: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.f64s(len)?))
    }

    fn var(&mut self) -> Result<Var> {
        let t = self.u64()?;
        Var::from_index(t as usize).ok_or_else(|| RomError::Format(format!("bad variable tag {t}")))
    }

    fn term(&mut self) -> Result<NonlinearTerm> {
        let t = self.u64()?;
        NonlinearTerm::from_index(t as usize).ok_or_else(|| RomError::Format(format!("bad term tag {t}")))
    }

    fn end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.0.read(&mut b)? {
            0 => Ok(()),
            _ => Err(RomError::Format("trailing bytes after payload".into())),
        }
    }
}

fn create(path: &Path) -> Result<Writer<BufWriter<File>>> {
    Ok(Writer(BufWriter::new(File::create(path)?)))
}

fn open(path: &Path) -> Result<Reader<BufReader<File>>> {
    Ok(Reader(BufReader::new(File::open(path)?)))
}

pub fn write_snapshots<W: Write>(out: W, s: &SnapshotSet) -> Result<()> {
    let mut w = Writer(out);
    let g = &s.grid;
    let flags = s.flags();
    w.bytes(SNAPSHOT_MAGIC)?;
    for v in [g.nx, g.ny, g.n(), s.nt()] {
        w.usize(v)?;
    }
    w.f64(s.dt)?;
    w.f64(g.length_x)?;
    w.f64(g.length_y)?;
    w.u64(flags.bits())?;
    w.f64s(&s.times)?;
    if let Some(states) = &s.states {
        for m in states {
            w.matrix(m)?;
        }
    }
    if let Some(terms) = &s.nonlinear {
        for m in terms {
            w.matrix(m)?;
        }
    }
    Ok(w.0.flush()?)
}

pub fn read_snapshots<R: Read>(input: R) -> Result<SnapshotSet> {
    let mut r = Reader(input);
    r.magic(SNAPSHOT_MAGIC)?;
    let nx = r.usize()?;
    let ny = r.usize()?;
    let n = r.usize()?;
    let nt = r.usize()?;
    let dt = r.f64()?;
    let length_x = r.f64()?;
    let length_y = r.f64()?;
    let bits = r.u64()?;
    if nx.checked_mul(ny) != Some(n) {
        return Err(RomError::DimensionMismatch {
            context: "snapshot header n = nx * ny",
            expected: nx.saturating_mul(ny),
            actual: n,
        });
    }
    if bits > 3 {
        return Err(RomError::Format(format!("unknown flag bits {bits:#x}")));
    }
    let grid = Grid::new(nx, ny, length_x, length_y).map_err(|e| RomError::Format(e.to_string()))?;
    let flags = RecordFlags::from_bits(bits);
    let times = r.f64s(nt)?;
    let states = if flags.states {
        Some([r.matrix(n, nt)?, r.matrix(n, nt)?, r.matrix(n, nt)?])
    } else {
        None
    };
    let nonlinear = if flags.nonlinear {
        let mut ms = Vec::with_capacity(6);
        for _ in 0..6 {
            ms.push(r.matrix(n, nt)?);
        }
        Some(<[DMatrix<f64>; 6]>::try_from(ms).unwrap())
    } else {
        None
    };
    r.end()?;
    Ok(SnapshotSet {
        grid,
        dt,
        times,
        states,
        nonlinear,
    })
}

pub fn save_snapshots(path: &Path, s: &SnapshotSet) -> Result<()> {
    write_snapshots(create(path)?.0, s)
}

pub fn load_snapshots(path: &Path) -> Result<SnapshotSet> {
    read_snapshots(open(path)?.0)
}

/// Basis layout: `magic n k var spectrum_len has_test gamma mean spectrum U [W]`.
pub fn write_basis<W: Write>(out: W, var: Var, b: &PodBasis) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(BASIS_MAGIC)?;
    w.usize(b.n())?;
    w.usize(b.k())?;
    w.usize(var.index())?;
    w.usize(b.spectrum.len())?;
    w.u64(b.test.is_some() as u64)?;
    w.f64(b.gamma.unwrap_or(f64::NAN))?;
    w.vector(&b.mean)?;
    w.f64s(&b.spectrum)?;
    w.matrix(&b.trial)?;
    if let Some(t) = &b.test {
        w.matrix(t)?;
    }
    Ok(w.0.flush()?)
}

pub fn read_basis<R: Read>(input: R) -> Result<(Var, PodBasis)> {
    let mut r = Reader(input);
    r.magic(BASIS_MAGIC)?;
    let n = r.usize()?;
    let k = r.usize()?;
    let var = r.var()?;
    let len = r.usize()?;
    let has_test = r.u64()? != 0;
    let gamma = r.f64()?;
    let mean = r.vector(n)?;
    let spectrum = r.f64s(len)?;
    let trial = r.matrix(n, k)?;
    let test = if has_test { Some(r.matrix(n, k)?) } else { None };
    r.end()?;
    Ok((
        var,
        PodBasis {
            trial,
            test,
            mean,
            spectrum,
            gamma: (!gamma.is_nan()).then_some(gamma),
        },
    ))
}

pub fn save_basis(path: &Path, var: Var, b: &PodBasis) -> Result<()> {
    write_basis(create(path)?.0, var, b)
}

pub fn load_basis(path: &Path) -> Result<(Var, PodBasis)> {
    read_basis(open(path)?.0)
}

/// Tensor layout: `magic k p term_count`, then per term
/// `term product_count` and per product `coef left right quad lin_left lin_right constant`,
/// followed by the Coriolis blocks `uv vu const_u const_v`.
pub fn write_tensors<W: Write>(out: W, t: &TensorCoefficients) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(TENSOR_MAGIC)?;
    w.usize(t.k)?;
    w.u64(2)?;
    w.usize(t.terms.len())?;
    for term in &t.terms {
        w.usize(term.term.index())?;
        w.usize(term.products.len())?;
        for p in &term.products {
            w.f64(p.coef)?;
            w.usize(p.left.index())?;
            w.usize(p.right.index())?;
            w.matrix(&p.quad)?;
            w.matrix(&p.lin_left)?;
            w.matrix(&p.lin_right)?;
            w.vector(&p.constant)?;
        }
    }
    let c = &t.coriolis;
    w.matrix(&c.uv)?;
    w.matrix(&c.vu)?;
    w.vector(&c.const_u)?;
    w.vector(&c.const_v)?;
    Ok(w.0.flush()?)
}

pub fn read_tensors<R: Read>(input: R) -> Result<TensorCoefficients> {
    let mut r = Reader(input);
    r.magic(TENSOR_MAGIC)?;
    let k = r.usize()?;
    let p = r.u64()?;
    if p != 2 {
        return Err(RomError::Format(format!("tensor file of degree {p}, expected 2")));
    }
    let count = r.usize()?;
    if count != 6 {
        return Err(RomError::Format(format!("expected 6 terms, found {count}")));
    }
    let mut terms = Vec::with_capacity(count);
    for i in 0..count {
        let term = r.term()?;
        if term.index() != i {
            return Err(RomError::Format(format!("term {} out of order", term.name())));
        }
        let np = r.usize()?;
        let mut products = Vec::with_capacity(np);
        for _ in 0..np {
            products.push(ProductTensor {
                coef: r.f64()?,
                left: r.var()?,
                right: r.var()?,
                quad: r.matrix(k, k * k)?,
                lin_left: r.matrix(k, k)?,
                lin_right: r.matrix(k, k)?,
                constant: r.vector(k)?,
            });
        }
        terms.push(TermTensors { term, products });
    }
    let coriolis = ReducedCoriolis {
        uv: r.matrix(k, k)?,
        vu: r.matrix(k, k)?,
        const_u: r.vector(k)?,
        const_v: r.vector(k)?,
    };
    r.end()?;
    Ok(TensorCoefficients { k, terms, coriolis })
}

pub fn save_tensors(path: &Path, t: &TensorCoefficients) -> Result<()> {
    write_tensors(create(path)?.0, t)
}

pub fn load_tensors(path: &Path) -> Result<TensorCoefficients> {
    read_tensors(open(path)?.0)
}

/// DEIM layout: `magic n m k term condition points[m] E V product_count`,
/// then per product `coef left right Um dUm abar dbbar` (sampled rows).
pub fn write_deim<W: Write>(out: W, op: &DeimOperator) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(DEIM_MAGIC)?;
    w.usize(op.basis.nrows())?;
    w.usize(op.m())?;
    w.usize(op.k())?;
    w.usize(op.term.index())?;
    w.f64(op.condition)?;
    for &p in &op.points {
        w.usize(p)?;
    }
    w.matrix(&op.e)?;
    w.matrix(&op.basis)?;
    w.usize(op.products.len())?;
    for p in &op.products {
        w.f64(p.coef)?;
        w.usize(p.left.index())?;
        w.usize(p.right.index())?;
        w.matrix(&p.a)?;
        w.matrix(&p.db)?;
        w.vector(&p.abar)?;
        w.vector(&p.dbbar)?;
    }
    Ok(w.0.flush()?)
}

pub fn read_deim<R: Read>(input: R) -> Result<DeimOperator> {
    let mut r = Reader(input);
    r.magic(DEIM_MAGIC)?;
    let n = r.usize()?;
    let m = r.usize()?;
    let k = r.usize()?;
    let term = r.term()?;
    let condition = r.f64()?;
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        let p = r.usize()?;
        if p >= n {
            return Err(RomError::Format(format!("DEIM point {p} outside [0, {n})")));
        }
        points.push(p);
    }
    let e = r.matrix(k, m)?;
    let basis = r.matrix(n, m)?;
    let np = r.usize()?;
    let mut products = Vec::with_capacity(np);
    for _ in 0..np {
        products.push(SampledProduct {
            coef: r.f64()?,
            left: r.var()?,
            right: r.var()?,
            a: r.matrix(m, k)?,
            db: r.matrix(m, k)?,
            abar: r.vector(m)?,
            dbbar: r.vector(m)?,
        });
    }
    r.end()?;
    Ok(DeimOperator {
        term,
        basis,
        points,
        e,
        products,
        condition,
    })
}

pub fn save_deim(path: &Path, op: &DeimOperator) -> Result<()> {
    write_deim(create(path)?.0, op)
}

pub fn load_deim(path: &Path) -> Result<DeimOperator> {
    read_deim(open(path)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set(flags: RecordFlags) -> SnapshotSet {
        let grid = Grid::new(3, 4, 2.0, 3.0).unwrap();
        let m = |s: f64| DMatrix::from_fn(12, 2, |i, j| s + i as f64 * 0.25 - j as f64 / 3.0);
        SnapshotSet {
            grid,
            dt: 960.0,
            times: vec![960.0, 1920.0],
            states: flags.states.then(|| [m(1.0), m(2.0), m(3.0)]),
            nonlinear: flags.nonlinear.then(|| [4.0, 5.0, 6.0, 7.0, 8.0, 9.0].map(m)),
        }
    }

    fn bytes(s: &SnapshotSet) -> Vec<u8> {
        let mut buf = Vec::new();
        write_snapshots(&mut buf, s).unwrap();
        buf
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        for bits in 0..4 {
            let s = small_set(RecordFlags::from_bits(bits));
            let buf = bytes(&s);
            let back = read_snapshots(buf.as_slice()).unwrap();
            assert_eq!(back, s);
            assert_eq!(bytes(&back), buf);
        }
    }

    #[test]
    fn snapshot_header_layout() {
        let buf = bytes(&small_set(RecordFlags::ALL));
        assert_eq!(&buf[..8], b"SWESNAP1");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[24..32].try_into().unwrap()), 12);
        assert_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), 960.0);
        assert_eq!(u64::from_le_bytes(buf[64..72].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 72 + 8 * (2 + 9 * 24));
    }

    #[test]
    fn snapshot_errors() {
        let buf = bytes(&small_set(RecordFlags::ALL));
        let mut bad = buf.clone();
        bad[..8].copy_from_slice(b"NOTASNAP");
        assert!(matches!(read_snapshots(bad.as_slice()), Err(RomError::Format(_))));
        let mut v2 = buf.clone();
        v2[7] = b'2';
        assert!(matches!(read_snapshots(v2.as_slice()), Err(RomError::Version(_))));
        let mut dims = buf.clone();
        dims[24..32].copy_from_slice(&13u64.to_le_bytes());
        assert!(matches!(read_snapshots(dims.as_slice()), Err(RomError::DimensionMismatch { .. })));
        assert!(matches!(read_snapshots(&buf[..buf.len() - 1]), Err(RomError::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_snapshots(long.as_slice()), Err(RomError::Format(_))));
    }

    #[test]
    fn basis_roundtrip() {
        let trial = DMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
        let b = PodBasis {
            trial: trial.clone(),
            test: Some(trial * 0.5),
            mean: DVector::from_element(5, 1.5),
            spectrum: vec![3.0, 2.0, 1.0],
            gamma: Some(0.99),
        };
        let mut buf = Vec::new();
        write_basis(&mut buf, Var::Phi, &b).unwrap();
        let (var, back) = read_basis(buf.as_slice()).unwrap();
        assert_eq!(var, Var::Phi);
        assert_eq!(back, b);
        let plain = PodBasis { test: None, gamma: None, ..b };
        buf.clear();
        write_basis(&mut buf, Var::U, &plain).unwrap();
        assert_eq!(read_basis(buf.as_slice()).unwrap().1, plain);
        assert!(matches!(read_tensors(buf.as_slice()), Err(RomError::Format(_))));
    }
}
