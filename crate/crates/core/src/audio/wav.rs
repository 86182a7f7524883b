//! RIFF/WAVE decoding and encoding.
//!
//! Supported codecs: integer PCM at 8 (unsigned), 16, 24 and 32 bits,
//! IEEE float at 32 and 64 bits, and either of those wrapped in
//! `WAVE_FORMAT_EXTENSIBLE`. Unknown chunks are skipped. Integer samples
//! are divided by the magnitude of the type's most negative value, so the
//! full range maps onto [-1, 1).

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;
/// Bytes 2..16 shared by the PCM and float sub-format GUIDs.
const GUID_TAIL: [u8; 14] = [
    0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71,
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WavError {
    #[error("byte {offset}: expected `{expected}`, found {found:?}")]
    BadTag {
        offset: usize,
        expected: &'static str,
        found: [u8; 4],
    },
    #[error("byte {offset}: file ends inside {what} (need {needed} bytes, {available} left)")]
    Truncated {
        offset: usize,
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("byte {offset}: fmt chunk is {len} bytes, need at least {min}")]
    FmtTooShort { offset: usize, len: usize, min: usize },
    #[error("byte {offset}: unsupported codec tag {tag:#06x}")]
    UnsupportedCodec { offset: usize, tag: u16 },
    #[error("byte {offset}: unsupported sample width of {bits} bits for codec {tag:#06x}")]
    UnsupportedBitDepth { offset: usize, tag: u16, bits: u16 },
    #[error("byte {offset}: invalid header field {field} = {value}")]
    BadField {
        offset: usize,
        field: &'static str,
        value: u64,
    },
    #[error("no `fmt ` chunk before the data chunk (scanned to byte {offset})")]
    MissingFmt { offset: usize },
    #[error("no `data` chunk (scanned to byte {offset})")]
    MissingData { offset: usize },
    #[error("byte {offset}: data chunk of {len} bytes is not a whole number of {block}-byte frames")]
    PartialFrame { offset: usize, len: usize, block: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm8,
    Pcm16,
    Pcm24,
    Pcm32,
    Float32,
    Float64,
}

impl SampleFormat {
    pub fn bytes(self) -> usize {
        match self {
            SampleFormat::Pcm8 => 1,
            SampleFormat::Pcm16 => 2,
            SampleFormat::Pcm24 => 3,
            SampleFormat::Pcm32 | SampleFormat::Float32 => 4,
            SampleFormat::Float64 => 8,
        }
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Float32 | SampleFormat::Float64 => FORMAT_FLOAT,
            _ => FORMAT_PCM,
        }
    }

    fn from_header(tag: u16, bits: u16, offset: usize) -> Result<Self, WavError> {
        let fmt = match (tag, bits) {
            (FORMAT_PCM, 8) => SampleFormat::Pcm8,
            (FORMAT_PCM, 16) => SampleFormat::Pcm16,
            (FORMAT_PCM, 24) => SampleFormat::Pcm24,
            (FORMAT_PCM, 32) => SampleFormat::Pcm32,
            (FORMAT_FLOAT, 32) => SampleFormat::Float32,
            (FORMAT_FLOAT, 64) => SampleFormat::Float64,
            (FORMAT_PCM | FORMAT_FLOAT, _) => return Err(WavError::UnsupportedBitDepth { offset, tag, bits }),
            _ => return Err(WavError::UnsupportedCodec { offset, tag }),
        };
        Ok(fmt)
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            SampleFormat::Pcm8 => (b[0] as f64 - 128.0) / 128.0,
            SampleFormat::Pcm16 => i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
            SampleFormat::Pcm24 => {
                let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
                v as f64 / 8_388_608.0
            }
            SampleFormat::Pcm32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0,
            SampleFormat::Float32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            SampleFormat::Float64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        let int = |scale: f64, min: f64, max: f64| (v * scale).round().clamp(min, max);
        match self {
            SampleFormat::Pcm8 => out.push((int(128.0, -128.0, 127.0) + 128.0) as u8),
            SampleFormat::Pcm16 => out.extend_from_slice(&(int(32768.0, -32768.0, 32767.0) as i16).to_le_bytes()),
            SampleFormat::Pcm24 => {
                let s = int(8_388_608.0, -8_388_608.0, 8_388_607.0) as i32;
                out.extend_from_slice(&s.to_le_bytes()[..3]);
            }
            SampleFormat::Pcm32 => {
                let s = int(2_147_483_648.0, -2_147_483_648.0, 2_147_483_647.0) as i32;
                out.extend_from_slice(&s.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            SampleFormat::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

/// Decoded audio with channels kept separate.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedWav {
    pub sample_rate: u32,
    pub format: SampleFormat,
    /// One sample vector per channel, all of equal length.
    pub channels: Vec<Vec<f64>>,
}

impl DecodedWav {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

struct Fmt {
    format: SampleFormat,
    channels: usize,
    rate: u32,
    block: usize,
}

fn slice<'a>(bytes: &'a [u8], offset: usize, needed: usize, what: &'static str) -> Result<&'a [u8], WavError> {
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(WavError::Truncated {
            offset,
            what,
            needed,
            available,
        });
    }
    Ok(&bytes[offset..offset + needed])
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn parse_fmt(body: &[u8], offset: usize) -> Result<Fmt, WavError> {
    if body.len() < 16 {
        return Err(WavError::FmtTooShort {
            offset,
            len: body.len(),
            min: 16,
        });
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2) as usize;
    let rate = u32_at(body, 4);
    let block = u16_at(body, 12) as usize;
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(WavError::FmtTooShort {
                offset,
                len: body.len(),
                min: 40,
            });
        }
        let guid = &body[24..40];
        let sub = u16_at(guid, 0);
        if guid[2..] != GUID_TAIL {
            return Err(WavError::UnsupportedCodec {
                offset: offset + 24,
                tag: sub,
            });
        }
        tag = sub;
    }
    let format = SampleFormat::from_header(tag, bits, offset)?;
    if channels == 0 {
        return Err(WavError::BadField {
            offset: offset + 2,
            field: "channels",
            value: 0,
        });
    }
    if rate == 0 {
        return Err(WavError::BadField {
            offset: offset + 4,
            field: "sample_rate",
            value: 0,
        });
    }
    if block != channels * format.bytes() {
        return Err(WavError::BadField {
            offset: offset + 12,
            field: "block_align",
            value: block as u64,
        });
    }
    Ok(Fmt {
        format,
        channels,
        rate,
        block,
    })
}

/// Parses a RIFF/WAVE byte buffer.
pub fn decode_wav(bytes: &[u8]) -> Result<DecodedWav, WavError> {
    let header = slice(bytes, 0, 12, "RIFF header")?;
    for (offset, expected) in [(0, "RIFF"), (8, "WAVE")] {
        let found: [u8; 4] = header[offset..offset + 4].try_into().expect("4 bytes");
        if found != expected.as_bytes() {
            return Err(WavError::BadTag {
                offset,
                expected,
                found,
            });
        }
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    while pos < bytes.len() {
        let head = slice(bytes, pos, 8, "chunk header")?;
        let id: [u8; 4] = head[..4].try_into().expect("4 bytes");
        let size = u32_at(head, 4) as usize;
        let body_at = pos + 8;
        match &id {
            b"fmt " => {
                let body = slice(bytes, body_at, size, "fmt chunk")?;
                fmt = Some(parse_fmt(body, body_at)?);
            }
            b"data" => {
                let f = fmt.ok_or(WavError::MissingFmt { offset: pos })?;
                let body = slice(bytes, body_at, size, "data chunk")?;
                if !size.is_multiple_of(f.block) {
                    return Err(WavError::PartialFrame {
                        offset: body_at,
                        len: size,
                        block: f.block,
                    });
                }
                let frames = size / f.block;
                let width = f.format.bytes();
                let mut channels = vec![Vec::with_capacity(frames); f.channels];
                for frame in body.chunks_exact(f.block) {
                    for (c, ch) in channels.iter_mut().enumerate() {
                        ch.push(f.format.decode(&frame[c * width..(c + 1) * width]));
                    }
                }
                return Ok(DecodedWav {
                    sample_rate: f.rate,
                    format: f.format,
                    channels,
                });
            }
            _ => {
                slice(bytes, body_at, size, "chunk body")?;
            }
        }
        pos = body_at + size + (size & 1);
    }
    Err(WavError::MissingData { offset: bytes.len() })
}

/// Writes a canonical 44-byte-header WAV. `channels` must have equal
/// lengths.
pub fn encode_wav(channels: &[Vec<f64>], sample_rate: u32, format: SampleFormat) -> Vec<u8> {
    let n = channels.first().map_or(0, Vec::len);
    assert!(channels.iter().all(|c| c.len() == n), "channels differ in length");
    let block = channels.len() * format.bytes();
    let data_len = n * block;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&(channels.len() as u16).to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&((sample_rate as usize * block) as u32).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&((format.bytes() * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..n {
        for c in channels {
            format.encode(c[i], &mut out);
        }
    }
    if data_len & 1 == 1 {
        out.push(0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16(values: &[i16]) -> Vec<u8> {
        let v: Vec<f64> = values.iter().map(|&s| s as f64 / 32768.0).collect();
        encode_wav(&[v], 8000, SampleFormat::Pcm16)
    }

    #[test]
    fn pcm16_extremes() {
        let w = decode_wav(&pcm16(&[32767, -32768, 0])).unwrap();
        assert!((w.channels[0][0] - 0.99997).abs() < 1e-5);
        assert_eq!(w.channels[0][1], -1.0);
        assert_eq!(w.channels[0][2], 0.0);
    }

    #[test]
    fn stereo_header_arithmetic() {
        let one_sec = vec![0.0; 44100];
        let bytes = encode_wav(&[one_sec.clone(), one_sec], 44100, SampleFormat::Pcm16);
        let w = decode_wav(&bytes).unwrap();
        assert_eq!((w.sample_rate, w.channel_count(), w.frames()), (44100, 2, 44100));
    }

    #[test]
    fn every_format_round_trips() {
        let v = vec![0.5, -0.25, 0.0, -1.0, 0.125];
        for f in [
            SampleFormat::Pcm8,
            SampleFormat::Pcm16,
            SampleFormat::Pcm24,
            SampleFormat::Pcm32,
            SampleFormat::Float32,
            SampleFormat::Float64,
        ] {
            let w = decode_wav(&encode_wav(&[v.clone(), v.clone()], 22050, f)).unwrap();
            assert_eq!(w.format, f);
            assert_eq!(w.channels[1], v, "{f:?}");
        }
    }

    #[test]
    fn skips_unknown_chunks_and_reads_extensible() {
        let plain = encode_wav(&[vec![0.5, -0.5]], 16000, SampleFormat::Pcm24);
        let mut b = plain[..12].to_vec();
        b.extend_from_slice(b"LIST\x03\x00\x00\x00abc\x00");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&40u32.to_le_bytes());
        b.extend_from_slice(&FORMAT_EXTENSIBLE.to_le_bytes());
        b.extend_from_slice(&plain[22..36]);
        b.extend_from_slice(&22u16.to_le_bytes());
        b.extend_from_slice(&24u16.to_le_bytes());
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&FORMAT_PCM.to_le_bytes());
        b.extend_from_slice(&GUID_TAIL);
        b.extend_from_slice(&plain[36..]);
        let w = decode_wav(&b).unwrap();
        assert_eq!(w.channels[0], vec![0.5, -0.5]);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn distinct_errors_with_offsets() {
        let good = pcm16(&[1, 2, 3]);
        assert!(matches!(decode_wav(b"RIFX"), Err(WavError::Truncated { offset: 0, .. })));
        let mut bad = good.clone();
        bad[8] = b'X';
        assert!(matches!(decode_wav(&bad), Err(WavError::BadTag { offset: 8, .. })));
        assert!(matches!(
            decode_wav(&good[..good.len() - 2]),
            Err(WavError::Truncated { offset: 44, what: "data chunk", .. })
        ));
        let mut mulaw = good.clone();
        mulaw[20] = 7;
        assert!(matches!(decode_wav(&mulaw), Err(WavError::UnsupportedCodec { offset: 20, tag: 7 })));
        let mut odd = good.clone();
        odd[34] = 12;
        assert!(matches!(decode_wav(&odd), Err(WavError::UnsupportedBitDepth { bits: 12, .. })));
        let mut partial = good.clone();
        partial[40] = 5;
        partial.truncate(49);
        assert!(matches!(decode_wav(&partial), Err(WavError::PartialFrame { offset: 44, .. })));
        assert!(matches!(decode_wav(&good[..36]), Err(WavError::MissingData { .. })));
    }
}
