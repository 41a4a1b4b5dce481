use super::QuantError;

/// 2-bit codes, four weights per byte, first weight in the low bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TernaryCode {
    Zero = 0b00,
    Plus = 0b01,
    Minus = 0b10,
}

impl TernaryCode {
    fn from_value(v: f32) -> Result<Self, QuantError> {
        match v {
            x if x == 0.0 => Ok(Self::Zero),
            x if x == 1.0 => Ok(Self::Plus),
            x if x == -1.0 => Ok(Self::Minus),
            other => Err(QuantError::Contract(format!("cannot pack non-ternary value {other}"))),
        }
    }

    fn from_bits(bits: u8) -> Result<Self, QuantError> {
        match bits {
            0b00 => Ok(Self::Zero),
            0b01 => Ok(Self::Plus),
            0b10 => Ok(Self::Minus),
            _ => Err(QuantError::Contract("reserved ternary code 0b11".into())),
        }
    }

    fn value(self) -> f32 {
        match self {
            Self::Zero => 0.0,
            Self::Plus => 1.0,
            Self::Minus => -1.0,
        }
    }
}

pub fn pack_ternary(values: &[f32]) -> Result<Vec<u8>, QuantError> {
    let mut out = vec![0u8; values.len().div_ceil(4)];
    for (i, &v) in values.iter().enumerate() {
        out[i / 4] |= (TernaryCode::from_value(v)? as u8) << ((i % 4) * 2);
    }
    Ok(out)
}

/// Decodes `len` weights. Padding bits in the last byte must be zero.
pub fn unpack_ternary(bytes: &[u8], len: usize) -> Result<Vec<f32>, QuantError> {
    if bytes.len() != len.div_ceil(4) {
        return Err(QuantError::Contract(format!(
            "{} packed bytes cannot hold exactly {len} ternary weights",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        out.push(TernaryCode::from_bits((bytes[i / 4] >> ((i % 4) * 2)) & 0b11)?.value());
    }
    if !len.is_multiple_of(4) && bytes[len / 4] >> ((len % 4) * 2) != 0 {
        return Err(QuantError::Contract("non-zero padding bits in ternary payload".into()));
    }
    Ok(out)
}
