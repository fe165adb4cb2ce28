//! Binary container for finalized states.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   b"IPODSTAT"
//! version u32
//! m, l, rows, count                    u64 ×4
//! weight fingerprint                   [u8; 32]
//! tol_p, tol_sv, tol_o                 f64 ×3
//! reorth_cap                           u64
//! e_p, e_sv, hs_sq_stream              f64 ×3
//! sigma                                f64 × l
//! V (column major)                     f64 × m·l
//! W (column major)                     f64 × rows·l
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::state::{IpodState, IpodTolerances, StateParts};
use crate::error::{Error, Result};
use crate::weighted::WeightOperator;

const MAGIC: &[u8; 8] = b"IPODSTAT";
const VERSION: u32 = 1;

fn put_u64(w: &mut impl Write, v: usize) -> Result<()> {
    w.write_all(&(v as u64).to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<usize> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    usize::try_from(u64::from_le_bytes(buf)).map_err(|_| Error::Format("size overflows usize".into()))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

impl IpodState {
    /// Serializes a finalized state.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        if !self.is_finalized() {
            return Err(Error::NotFinalized("serialization"));
        }
        let (m, l) = self.v().shape();
        let rows = self.w().nrows();
        let tols = self.tolerances();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [m, l, rows, self.count()] {
            put_u64(&mut w, v)?;
        }
        w.write_all(&self.weight().fingerprint())?;
        put_f64s(&mut w, &[tols.tol_p, tols.tol_sv, tols.tol_o])?;
        put_u64(&mut w, tols.reorth_cap)?;
        put_f64s(&mut w, &[self.e_p(), self.e_sv(), self.hs_sq_stream()])?;
        put_f64s(&mut w, self.sigma().as_slice())?;
        put_f64s(&mut w, self.v().as_slice())?;
        put_f64s(&mut w, self.w().as_slice())?;
        Ok(())
    }

    /// Reads a state written by [`IpodState::write_to`]. The weight must be
    /// the one the state was built with (checked by fingerprint).
    pub fn read_from(mut r: impl Read, weight: Arc<WeightOperator>) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)?;
        let version = u32::from_le_bytes(ver);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let m = get_u64(&mut r)?;
        let l = get_u64(&mut r)?;
        let rows = get_u64(&mut r)?;
        let count = get_u64(&mut r)?;
        if m != weight.dim() {
            return Err(Error::DimensionMismatch {
                context: "container weight",
                expected: m,
                actual: weight.dim(),
            });
        }
        if rows != count || l == 0 || l > rows.max(m) {
            return Err(Error::Format(format!("inconsistent shape l = {l}, rows = {rows}, count = {count}")));
        }
        let mut fp = [0u8; 32];
        r.read_exact(&mut fp)?;
        if fp != weight.fingerprint() {
            return Err(Error::Format("weight fingerprint mismatch".into()));
        }
        let tols = IpodTolerances {
            tol_p: get_f64(&mut r)?,
            tol_sv: get_f64(&mut r)?,
            tol_o: get_f64(&mut r)?,
            reorth_cap: get_u64(&mut r)?,
        };
        tols.validate()?;
        let e_p = get_f64(&mut r)?;
        let e_sv = get_f64(&mut r)?;
        let hs_sq_stream = get_f64(&mut r)?;
        let sigma = DVector::from_vec(get_f64s(&mut r, l)?);
        let v = DMatrix::from_vec(m, l, get_f64s(&mut r, m * l)?);
        let w = DMatrix::from_vec(rows, l, get_f64s(&mut r, rows * l)?);
        Ok(IpodState::from_parts(StateParts {
            weight,
            tols,
            v,
            sigma,
            w,
            e_p,
            e_sv,
            count,
            hs_sq_stream,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn sample() -> IpodState {
        let wt = Arc::new(WeightOperator::diagonal(&[1.0, 2.0, 3.0]).unwrap());
        let mut s = IpodState::init(&dvector![1.0, 0.0, 1.0], wt, IpodTolerances::uniform(1e-3)).unwrap();
        s.update(&dvector![0.0, 1.0, 0.5]).unwrap();
        s.update(&dvector![1.0, 0.0, 1.0 + 1e-5]).unwrap();
        s.finalize();
        s
    }

    #[test]
    fn round_trip() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = IpodState::read_from(buf.as_slice(), Arc::clone(s.weight())).unwrap();
        assert_eq!(back.v(), s.v());
        assert_eq!(back.w(), s.w());
        assert_eq!(back.sigma(), s.sigma());
        assert_eq!(back.e_p().to_bits(), s.e_p().to_bits());
        assert_eq!(back.count(), 3);
        assert_eq!(back.reconstruct(3, 1.0).unwrap(), s.reconstruct(3, 1.0).unwrap());
    }

    #[test]
    fn rejects_unfinalized_and_foreign_weight() {
        let wt = Arc::new(WeightOperator::identity(2));
        let s = IpodState::init(&dvector![1.0, 0.0], wt, IpodTolerances::default()).unwrap();
        assert!(s.write_to(Vec::new()).is_err());

        let s = sample();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let other = Arc::new(WeightOperator::diagonal(&[1.0, 2.0, 4.0]).unwrap());
        assert!(matches!(IpodState::read_from(buf.as_slice(), other), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(IpodState::read_from(buf.as_slice(), Arc::clone(s.weight())).is_err());
    }
}
