//! Resolution-progressive codestream.
//!
//! A stream is a fixed header followed by `levels + 1` packets. Packet 1
//! carries the deepest LL subband; packet `r > 1` carries the HL/LH/HH
//! triplet that lifts resolution `r - 1` to `r`. Every subband is tiled into
//! 16x16 code blocks coded independently, so a prefix of the stream decodes
//! to the LL grid of the matching resolution without touching later bytes.
//!
//! Wire layout, all little-endian:
//! magic `WCPC` | version u16 | width u32 | height u32 | levels u8 |
//! codeblock_size u8 | packet_count u16 | packet byte lengths (u32 each) |
//! packets. Inside a packet each block is a u16 payload length plus payload,
//! in subband order (LL, or HL then LH then HH) and raster block order.

mod block;

pub use block::{decode_block, encode_block, BlockCodeError, CODE_BLOCK_SIZE};

use thiserror::Error;

use crate::image::Image;
use crate::wavelet::{
    self, forward_dwt, inverse_dwt, CoeffGrid, DetailBands, SubbandPyramid, WaveletError,
};

pub const MAGIC: [u8; 4] = *b"WCPC";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error("bad magic: not a wavecomp codestream")]
    BadMagic,
    #[error("unsupported codestream version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported code block size {0}")]
    UnsupportedBlockSize(u8),
    #[error("stream header truncated")]
    TruncatedHeader,
    #[error("stream truncated inside packet {packet}")]
    TruncatedStream { packet: usize },
    #[error("corrupt block {block} in packet {packet}: {reason}")]
    CorruptBlock { packet: usize, block: usize, reason: String },
    #[error("header declares invalid geometry {width}x{height} at {levels} levels")]
    BadGeometry { width: u32, height: u32, levels: u8 },
    #[error("resolution {resolution} out of range 1..={levels}")]
    BadResolution { resolution: u8, levels: u8 },
    #[error("failed to write stream: {0}")]
    StreamWriteFailure(#[from] std::io::Error),
}

/// Header summary returned by [`inspect`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamInfo {
    pub width: u32,
    pub height: u32,
    pub levels: u8,
    pub codeblock_size: u8,
    pub packet_lengths: Vec<u32>,
    pub header_len: usize,
}

impl StreamInfo {
    /// Header plus all packet bytes.
    pub fn total_len(&self) -> usize {
        self.header_len + self.packet_lengths.iter().map(|&l| l as usize).sum::<usize>()
    }

    /// Bytes needed to decode resolutions `1..=r`.
    pub fn prefix_len(&self, r: u8) -> usize {
        self.header_len + self.packet_lengths[..r as usize].iter().map(|&l| l as usize).sum::<usize>()
    }
}

/// Result of a prefix decode: the LL grid at the requested resolution and
/// how many stream bytes were consumed.
#[derive(Debug, Clone)]
pub struct PartialDecode {
    pub grid: CoeffGrid,
    pub bytes_read: usize,
}

/// Deepest decomposition the transform supports for this geometry; tiny
/// images clamp to fewer levels (a 1x1 image to none at all).
pub fn max_levels_for(width: u32, height: u32) -> u8 {
    let min_dim = width.min(height);
    let mut levels = 0u8;
    while levels < wavelet::MAX_LEVELS && 1u32 << (levels + 1) <= min_dim {
        levels += 1;
    }
    levels
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Raster tiling of a `w x h` subband into code blocks: (x, y, bw, bh).
fn block_tiles(w: usize, h: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut tiles = Vec::new();
    let mut y = 0;
    while y < h {
        let bh = CODE_BLOCK_SIZE.min(h - y);
        let mut x = 0;
        while x < w {
            let bw = CODE_BLOCK_SIZE.min(w - x);
            tiles.push((x, y, bw, bh));
            x += bw;
        }
        y += bh;
    }
    tiles
}

fn encode_subband(grid: &CoeffGrid, out: &mut Vec<u8>) {
    let mut coeffs = Vec::with_capacity(CODE_BLOCK_SIZE * CODE_BLOCK_SIZE);
    let mut payload = Vec::new();
    for (x0, y0, bw, bh) in block_tiles(grid.width(), grid.height()) {
        coeffs.clear();
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                coeffs.push(grid.get(x, y));
            }
        }
        payload.clear();
        encode_block(&coeffs, &mut payload);
        push_u16(out, payload.len() as u16);
        out.extend_from_slice(&payload);
    }
}

/// Compress to a codestream. The requested depth is clamped to what the
/// geometry supports so that even 1x1 images code losslessly.
pub fn encode(image: &Image, levels: u8) -> Result<Vec<u8>, CodecError> {
    if levels == 0 || levels > wavelet::MAX_LEVELS {
        return Err(WaveletError::InvalidLevels(levels).into());
    }
    let levels = levels.min(max_levels_for(image.width(), image.height()));

    // packet 1 = deepest LL, then one detail triplet per increment
    let mut packets: Vec<Vec<u8>> = Vec::with_capacity(levels as usize + 1);
    if levels == 0 {
        let grid = CoeffGrid::from_data(
            image.width() as usize,
            image.height() as usize,
            image.samples().iter().map(|&v| v as i32).collect(),
        );
        let mut body = Vec::new();
        encode_subband(&grid, &mut body);
        packets.push(body);
    } else {
        let pyramid = forward_dwt(image, levels)?;
        let mut body = Vec::new();
        encode_subband(pyramid.ll(), &mut body);
        packets.push(body);
        for r in 2..=levels as usize + 1 {
            let depth = (levels as usize + 2 - r) as u8;
            let bands = pyramid.details_at(depth);
            let mut body = Vec::new();
            encode_subband(&bands.hl, &mut body);
            encode_subband(&bands.lh, &mut body);
            encode_subband(&bands.hh, &mut body);
            packets.push(body);
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u16(&mut out, VERSION);
    push_u32(&mut out, image.width());
    push_u32(&mut out, image.height());
    out.push(levels);
    out.push(CODE_BLOCK_SIZE as u8);
    push_u16(&mut out, packets.len() as u16);
    for p in &packets {
        push_u32(&mut out, p.len() as u32);
    }
    for p in &packets {
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// [`encode`] straight into a sink; write errors surface as
/// [`CodecError::StreamWriteFailure`].
pub fn encode_to(image: &Image, levels: u8, mut sink: impl std::io::Write) -> Result<(), CodecError> {
    let stream = encode(image, levels)?;
    sink.write_all(&stream)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
}

/// Parse and validate the header without touching packet bytes.
pub fn inspect(bytes: &[u8]) -> Result<StreamInfo, CodecError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4).ok_or(CodecError::TruncatedHeader)?;
    if magic != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = c.u16().ok_or(CodecError::TruncatedHeader)?;
    if version != VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let width = c.u32().ok_or(CodecError::TruncatedHeader)?;
    let height = c.u32().ok_or(CodecError::TruncatedHeader)?;
    let levels = c.u8().ok_or(CodecError::TruncatedHeader)?;
    let codeblock_size = c.u8().ok_or(CodecError::TruncatedHeader)?;
    if codeblock_size as usize != CODE_BLOCK_SIZE {
        return Err(CodecError::UnsupportedBlockSize(codeblock_size));
    }
    let packet_count = c.u16().ok_or(CodecError::TruncatedHeader)?;
    if width == 0
        || height == 0
        || levels > wavelet::MAX_LEVELS
        || levels > max_levels_for(width, height)
        || packet_count as u32 != levels as u32 + 1
    {
        return Err(CodecError::BadGeometry { width, height, levels });
    }
    let mut packet_lengths = Vec::with_capacity(packet_count as usize);
    for _ in 0..packet_count {
        packet_lengths.push(c.u32().ok_or(CodecError::TruncatedHeader)?);
    }
    Ok(StreamInfo { width, height, levels, codeblock_size, packet_lengths, header_len: c.pos })
}

fn decode_subband(
    c: &mut Cursor<'_>,
    end: usize,
    w: usize,
    h: usize,
    packet: usize,
    block_index: &mut usize,
) -> Result<CoeffGrid, CodecError> {
    let mut grid = CoeffGrid::zeros(w, h);
    for (x0, y0, bw, bh) in block_tiles(w, h) {
        *block_index += 1;
        let too_short = || CodecError::TruncatedStream { packet };
        if c.pos + 2 > end {
            return Err(too_short());
        }
        let len = c.u16().ok_or_else(too_short)? as usize;
        if c.pos + len > end {
            return Err(too_short());
        }
        let payload = c.take(len).ok_or_else(too_short)?;
        let coeffs = decode_block(payload, bw * bh).map_err(|e| CodecError::CorruptBlock {
            packet,
            block: *block_index,
            reason: format!("{e:?}"),
        })?;
        for (i, v) in coeffs.into_iter().enumerate() {
            grid.set(x0 + i % bw, y0 + i / bw, v);
        }
    }
    Ok(grid)
}

/// Decode packets `1..=last` into the deepest LL plus detail triplets in the
/// order they unlock resolutions (deepest first). Never reads past the end of
/// packet `last`.
fn decode_packets(
    bytes: &[u8],
    info: &StreamInfo,
    last: usize,
) -> Result<(CoeffGrid, Vec<DetailBands>), CodecError> {
    // whole-packet availability first, so truncation names the packet even
    // when the gap is inside some later block
    let mut offset = info.header_len;
    for p in 1..=last {
        offset += info.packet_lengths[p - 1] as usize;
        if bytes.len() < offset {
            return Err(CodecError::TruncatedStream { packet: p });
        }
    }

    let (w, h) = (info.width as usize, info.height as usize);
    let dims: Vec<(usize, usize)> = (0..=info.levels)
        .scan((w, h), |dims, _| {
            let cur = *dims;
            *dims = (cur.0.div_ceil(2), cur.1.div_ceil(2));
            Some(cur)
        })
        .collect();

    let mut c = Cursor { bytes, pos: info.header_len };
    let mut packet_end = info.header_len + info.packet_lengths[0] as usize;
    let mut blocks = 0usize;
    let (llw, llh) = dims[info.levels as usize];
    let ll = decode_subband(&mut c, packet_end, llw, llh, 1, &mut blocks)?;
    if c.pos != packet_end {
        return Err(CodecError::CorruptBlock { packet: 1, block: blocks, reason: "trailing packet bytes".into() });
    }

    let mut details = Vec::new();
    for r in 2..=last {
        let depth = info.levels as usize + 2 - r;
        let (pw, ph) = dims[depth - 1];
        let (lw, lh) = (pw.div_ceil(2), ph.div_ceil(2));
        let (hw, hh) = (pw / 2, ph / 2);
        c.pos = packet_end;
        packet_end += info.packet_lengths[r - 1] as usize;
        blocks = 0;
        let hl = decode_subband(&mut c, packet_end, hw, lh, r, &mut blocks)?;
        let lhb = decode_subband(&mut c, packet_end, lw, hh, r, &mut blocks)?;
        let hhb = decode_subband(&mut c, packet_end, hw, hh, r, &mut blocks)?;
        if c.pos != packet_end {
            return Err(CodecError::CorruptBlock { packet: r, block: blocks, reason: "trailing packet bytes".into() });
        }
        details.push(DetailBands { hl, lh: lhb, hh: hhb });
    }
    Ok((ll, details))
}

/// Decode the whole stream back to the original image.
pub fn decode_full(bytes: &[u8]) -> Result<Image, CodecError> {
    let info = inspect(bytes)?;
    let packet_count = info.levels as usize + 1;
    let (ll, details) = decode_packets(bytes, &info, packet_count)?;
    if info.levels == 0 {
        let samples = ll.data().iter().map(|&v| v.clamp(0, 255) as u8).collect();
        return Ok(Image::new(info.width, info.height, samples).expect("header geometry validated"));
    }
    // decode_packets yields triplets deepest-first; the pyramid wants finest-first
    let mut by_depth = vec![None; info.levels as usize];
    for (i, bands) in details.into_iter().enumerate() {
        let depth = info.levels as usize - i;
        by_depth[depth - 1] = Some(bands);
    }
    let details: Vec<DetailBands> = by_depth.into_iter().map(|b| b.expect("all depths decoded")).collect();
    let pyramid = SubbandPyramid::from_parts(
        info.levels,
        info.width as usize,
        info.height as usize,
        ll,
        details,
    )?;
    Ok(inverse_dwt(&pyramid)?)
}

/// Decode only the prefix needed for resolution `r`, returning the LL grid
/// there and the exact number of bytes consumed.
pub fn decode_partial(bytes: &[u8], resolution: u8) -> Result<PartialDecode, CodecError> {
    let info = inspect(bytes)?;
    if resolution < 1 || resolution > info.levels {
        return Err(CodecError::BadResolution { resolution, levels: info.levels });
    }
    let (ll, details) = decode_packets(bytes, &info, resolution as usize)?;
    let mut grid = ll;
    for bands in &details {
        grid = wavelet::synthesize_with(&grid, bands)?;
    }
    Ok(PartialDecode { grid, bytes_read: info.prefix_len(resolution) })
}
