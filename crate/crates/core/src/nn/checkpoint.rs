//! Flat binary MLP checkpoints: `QPNN`, version, layer count, widths, then
//! little-endian f64 weight and bias blocks in layer order.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::{Layer, Mlp, NnError};

pub const MAGIC: &[u8; 4] = b"QPNN";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mlp: &Mlp, mut w: W) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(mlp.layers().len() as u32)?;
    for width in mlp.widths() {
        w.write_u32::<LittleEndian>(width as u32)?;
    }
    for l in mlp.layers() {
        for v in l.weight.iter().chain(l.bias.iter()) {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Mlp, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    if count == 0 {
        return Err(NnError::Checkpoint("zero layers".into()));
    }
    let widths = (0..=count)
        .map(|_| r.read_u32::<LittleEndian>().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let mut layers = Vec::with_capacity(count);
    for w in widths.windows(2) {
        let mut weight = Array2::zeros((w[1], w[0]));
        for v in weight.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let mut bias = Array1::zeros(w[1]);
        for v in bias.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        layers.push(Layer { weight, bias });
    }
    Mlp::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Mlp::new(&[5, 7, 3], &mut rng).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"QPNN");
        assert_eq!(buf.len(), 4 + 4 + 4 + 3 * 4 + 8 * m.n_params());
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.flat_params(), m.flat_params());
        assert_eq!(back.widths(), vec![5, 7, 3]);
    }

    #[test]
    fn corrupt_input_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mlp::new(&[2, 2], &mut rng).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(NnError::Checkpoint(_))));
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(NnError::Io(_))));
    }
}
