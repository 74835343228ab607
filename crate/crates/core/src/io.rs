//! Versioned binary containers for template sets, feature maps and forests,
//! plus JSON forms used for interchange and ground truth.
//!
//! Every container starts with a four-byte magic, a little-endian `u16`
//! format version, the writing tool's version and the run configuration
//! snapshot, both as length-prefixed UTF-8. Floats are stored as their bit
//! patterns so a read/write cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, Layout, Modality, PoseSample, QuantizedValue, Template, TemplateSet};
use crate::forest::{Forest, ForestConfig, NodeBody, RejectorParams, SplitParams, TreeNode};
use crate::synth::GroundTruth;

pub const TEMPLATES_MAGIC: [u8; 4] = *b"TMTS";
pub const FEATURE_MAP_MAGIC: [u8; 4] = *b"TMFM";
pub const FOREST_MAGIC: [u8; 4] = *b"TMFO";
pub const FORMAT_VERSION: u16 = 1;
pub const TOOL_VERSION: &str = concat!("tmforest ", env!("CARGO_PKG_VERSION"));

/// Provenance stored in front of every container body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub tool: String,
    pub config: String,
}

impl Header {
    pub fn new(config: impl Into<String>) -> Self {
        Header {
            version: FORMAT_VERSION,
            tool: TOOL_VERSION.into(),
            config: config.into(),
        }
    }
}

fn corrupt(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Data(format!("{what}: {e}"))
}

type W<'a> = &'a mut Vec<u8>;

fn put_str(out: W, s: &str) {
    out.write_u32::<LE>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn put_f64(out: W, v: f64) {
    out.write_u64::<LE>(v.to_bits()).unwrap();
}

fn put_f32(out: W, v: f32) {
    out.write_u32::<LE>(v.to_bits()).unwrap();
}

fn put_u32s(out: W, v: &[u32]) {
    out.write_u32::<LE>(v.len() as u32).unwrap();
    for &x in v {
        out.write_u32::<LE>(x).unwrap();
    }
}

fn put_values(out: W, v: &[QuantizedValue]) {
    out.extend(v.iter().map(|q| q.get()));
}

struct Reader<'a> {
    what: &'static str,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn err(&self, e: impl std::fmt::Display) -> Error {
        corrupt(self.what, e)
    }

    fn u8(&mut self) -> Result<u8> {
        self.buf.read_u8().map_err(|e| self.err(e))
    }

    fn u16(&mut self) -> Result<u16> {
        self.buf.read_u16::<LE>().map_err(|e| self.err(e))
    }

    fn u32(&mut self) -> Result<u32> {
        self.buf.read_u32::<LE>().map_err(|e| self.err(e))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.buf.read_u64::<LE>().map_err(|e| self.err(e))?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }

    /// A length prefix, checked against the bytes left so corrupt counts
    /// fail instead of allocating.
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem) > self.buf.len() {
            return Err(self.err(format!("length {n} exceeds the remaining data")));
        }
        Ok(n)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() {
            return Err(self.err("unexpected end of data"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let b = self.bytes(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| self.err(e))
    }

    fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len(4)?;
        (0..n).map(|_| self.u32()).collect()
    }

    fn values(&mut self, n: usize) -> Result<Vec<QuantizedValue>> {
        let b = self.bytes(n)?;
        b.iter()
            .map(|&v| QuantizedValue::new(v).ok_or_else(|| self.err(format!("quantized value {v} out of range"))))
            .collect()
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.err(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn put_header(out: W, magic: [u8; 4], h: &Header) {
    out.extend_from_slice(&magic);
    out.write_u16::<LE>(h.version).unwrap();
    put_str(out, &h.tool);
    put_str(out, &h.config);
}

fn read_header<'a>(buf: &'a [u8], magic: [u8; 4], what: &'static str) -> Result<(Header, Reader<'a>)> {
    let mut r = Reader { what, buf };
    let m = r.bytes(4)?;
    if m != magic {
        return Err(r.err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Compat(format!(
            "{what} format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let tool = r.str()?;
    let config = r.str()?;
    Ok((Header { version, tool, config }, r))
}

fn put_modalities(out: W, m: &[Modality]) {
    out.push(m.len() as u8);
    out.extend(m.iter().map(|k| k.code()));
}

fn read_modalities(r: &mut Reader) -> Result<Vec<Modality>> {
    let n = r.u8()? as usize;
    r.bytes(n)?
        .iter()
        .map(|&c| Modality::from_code(c).ok_or_else(|| r.err(format!("unknown modality code {c}"))))
        .collect()
}

fn put_layout(out: W, l: &Layout) {
    let (w, h) = l.patch_size();
    out.write_u16::<LE>(w as u16).unwrap();
    out.write_u16::<LE>(h as u16).unwrap();
    out.write_u32::<LE>(l.locations().len() as u32).unwrap();
    for &(x, y) in l.locations() {
        out.write_u16::<LE>(x).unwrap();
        out.write_u16::<LE>(y).unwrap();
    }
    put_modalities(out, l.modalities());
}

fn read_layout(r: &mut Reader) -> Result<Layout> {
    let w = r.u16()?;
    let h = r.u16()?;
    let n = r.len(4)?;
    let locations = (0..n).map(|_| Ok((r.u16()?, r.u16()?))).collect::<Result<Vec<_>>>()?;
    let modalities = read_modalities(r)?;
    Layout::new(w, h, locations, modalities).map_err(|e| r.err(e))
}

fn put_pose(out: W, p: &PoseSample) {
    for v in [p.yaw, p.pitch, p.roll, p.scale] {
        put_f64(out, v);
    }
}

fn read_pose(r: &mut Reader) -> Result<PoseSample> {
    Ok(PoseSample {
        yaw: r.f64()?,
        pitch: r.f64()?,
        roll: r.f64()?,
        scale: r.f64()?,
    })
}

pub fn encode_templates(set: &TemplateSet, h: &Header) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, TEMPLATES_MAGIC, h);
    put_layout(&mut out, set.layout());
    out.write_u32::<LE>(set.len() as u32).unwrap();
    for t in set.templates() {
        out.write_u32::<LE>(t.id).unwrap();
        out.write_u32::<LE>(t.object_id).unwrap();
        put_pose(&mut out, &t.pose);
        put_values(&mut out, &t.descriptor);
        out.extend(t.fg_mask.iter().map(|&f| f as u8));
        for &z in &t.depth {
            put_f32(&mut out, z);
        }
    }
    out
}

pub fn decode_templates(buf: &[u8]) -> Result<(TemplateSet, Header)> {
    let (h, mut r) = read_header(buf, TEMPLATES_MAGIC, "template container")?;
    let layout = read_layout(&mut r)?;
    let len = layout.descriptor_len();
    let locs = layout.locations().len();
    let n = r.len(8 + 32 + 2 * len + 4 * locs)?;
    let mut templates = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u32()?;
        let object_id = r.u32()?;
        let pose = read_pose(&mut r)?;
        let descriptor = r.values(len)?;
        let fg_mask = r
            .bytes(len)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(corrupt("template container", format!("mask byte {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let depth = (0..locs).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        templates.push(Template {
            id,
            object_id,
            pose,
            descriptor,
            fg_mask,
            depth,
        });
    }
    r.finish()?;
    Ok((TemplateSet::new(layout, templates)?, h))
}

pub fn encode_feature_map(map: &FeatureMap, h: &Header) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, FEATURE_MAP_MAGIC, h);
    out.write_u32::<LE>(map.width() as u32).unwrap();
    out.write_u32::<LE>(map.height() as u32).unwrap();
    put_modalities(&mut out, map.modalities());
    put_values(&mut out, map.values());
    match map.depth() {
        Some(d) => {
            out.push(1);
            for &z in d {
                put_f32(&mut out, z);
            }
        }
        None => out.push(0),
    }
    out
}

pub fn decode_feature_map(buf: &[u8]) -> Result<(FeatureMap, Header)> {
    let (h, mut r) = read_header(buf, FEATURE_MAP_MAGIC, "feature map container")?;
    let w = r.u32()? as usize;
    let hgt = r.u32()? as usize;
    let modalities = read_modalities(&mut r)?;
    let n = w
        .checked_mul(hgt)
        .and_then(|p| p.checked_mul(modalities.len()))
        .ok_or_else(|| r.err("dimensions overflow"))?;
    let values = r.values(n)?;
    let depth = match r.u8()? {
        0 => None,
        1 => Some((0..w * hgt).map(|_| r.f32()).collect::<Result<Vec<_>>>()?),
        b => return Err(r.err(format!("depth flag {b}"))),
    };
    r.finish()?;
    let map = FeatureMap::new(w, hgt, modalities, values, depth).map_err(|e| r.err(e))?;
    Ok((map, h))
}

fn put_rejector(out: W, p: &RejectorParams) {
    put_u32s(out, &p.selector);
    out.extend_from_slice(&p.known);
    put_f64(out, p.accept_floor);
    put_f64(out, p.density_floor);
}

fn read_rejector(r: &mut Reader) -> Result<RejectorParams> {
    let selector = r.u32s()?;
    let known = r.bytes(selector.len())?.to_vec();
    Ok(RejectorParams {
        selector,
        known,
        accept_floor: r.f64()?,
        density_floor: r.f64()?,
    })
}

fn put_node(out: W, n: &TreeNode) {
    put_rejector(out, &n.rejector);
    match &n.body {
        NodeBody::Leaf { templates } => {
            out.push(0);
            put_u32s(out, templates);
        }
        NodeBody::Split { params, left, right } => {
            out.push(1);
            put_u32s(out, &params.selector);
            put_values(out, &params.exemplar);
            put_f64(out, params.tau);
            put_f64(out, params.fuzzy_margin);
            put_node(out, left);
            put_node(out, right);
        }
    }
}

struct NodeLimits {
    descriptor_len: u32,
    templates: u32,
    max_depth: usize,
}

fn read_node(r: &mut Reader, lim: &NodeLimits, depth: usize) -> Result<TreeNode> {
    if depth > lim.max_depth {
        return Err(r.err("tree deeper than its configuration allows"));
    }
    let rejector = read_rejector(r)?;
    if rejector.selector.iter().any(|&c| c >= lim.descriptor_len) {
        return Err(r.err("rejector coordinate outside the descriptor"));
    }
    let body = match r.u8()? {
        0 => {
            let templates = r.u32s()?;
            if templates.is_empty() || templates.iter().any(|&t| t >= lim.templates) {
                return Err(r.err("leaf is empty or names an unknown template"));
            }
            NodeBody::Leaf { templates }
        }
        1 => {
            let selector = r.u32s()?;
            if selector.is_empty() || selector.iter().any(|&c| c >= lim.descriptor_len) {
                return Err(r.err("split selector is empty or outside the descriptor"));
            }
            let exemplar = r.values(selector.len())?;
            let params = SplitParams {
                selector,
                exemplar,
                tau: r.f64()?,
                fuzzy_margin: r.f64()?,
            };
            let left = Box::new(read_node(r, lim, depth + 1)?);
            let right = Box::new(read_node(r, lim, depth + 1)?);
            NodeBody::Split { params, left, right }
        }
        b => return Err(r.err(format!("node tag {b}"))),
    };
    Ok(TreeNode { rejector, body })
}

pub fn encode_forest(f: &Forest, h: &Header) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, FOREST_MAGIC, h);
    put_layout(&mut out, &f.layout);
    out.write_u32::<LE>(f.template_count as u32).unwrap();
    put_str(&mut out, &serde_json::to_string(&f.config).expect("forest config serializes"));
    out.write_u32::<LE>(f.trees.len() as u32).unwrap();
    for t in &f.trees {
        put_node(&mut out, t);
    }
    out
}

pub fn decode_forest(buf: &[u8]) -> Result<(Forest, Header)> {
    let (h, mut r) = read_header(buf, FOREST_MAGIC, "forest container")?;
    let layout = read_layout(&mut r)?;
    let template_count = r.u32()? as usize;
    let config: ForestConfig = serde_json::from_str(&r.str()?).map_err(|e| r.err(e))?;
    let lim = NodeLimits {
        descriptor_len: layout.descriptor_len() as u32,
        templates: template_count as u32,
        max_depth: config.max_depth.unwrap_or(usize::MAX).min(64),
    };
    let n = r.len(1)?;
    let trees = (0..n).map(|_| read_node(&mut r, &lim, 0)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((
        Forest {
            layout,
            template_count,
            config,
            trees,
        },
        h,
    ))
}

pub fn templates_to_json(set: &TemplateSet) -> String {
    serde_json::to_string(set).expect("template set serializes")
}

pub fn templates_from_json(text: &str) -> Result<TemplateSet> {
    serde_json::from_str(text).map_err(|e| corrupt("template JSON", e))
}

pub fn ground_truth_jsonl(gt: &[GroundTruth]) -> String {
    gt.iter()
        .map(|g| serde_json::to_string(g).expect("ground truth serializes") + "\n")
        .collect()
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruth>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| corrupt("ground truth", e)))
        .collect()
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<(TemplateSet, Header)> {
    decode_templates(&read_file(path)?)
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<(FeatureMap, Header)> {
    decode_feature_map(&read_file(path)?)
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<(Forest, Header)> {
    decode_forest(&read_file(path)?)
}
