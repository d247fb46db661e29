//! Binary container for a built index. Round trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnConfig, Graph, ItemIndex};
use crate::dataset::Topic;
use crate::error::{Error, Result};
use crate::fileio::{self, BinReader, BinWriter};

const MAGIC: &[u8; 8] = b"CRINDEX1";

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    topics: Vec<Vec<Topic>>,
    ann: Option<(AnnConfig, u32)>,
}

impl ItemIndex {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dim: self.dim,
            count: self.len(),
            topics: self.topics.clone(),
            ann: self.graph.as_ref().map(|g| (g.config.clone(), g.entry)),
        };
        let mut w = BinWriter::default();
        w.bytes(MAGIC);
        w.json(&header)?;
        w.u32s(&self.item_ids);
        w.f32s(&self.embeddings);
        for &p in &self.popularity {
            w.u64(p);
        }
        if let Some(g) = &self.graph {
            for layers in &g.links {
                w.u32(layers.len() as u32);
                for l in layers {
                    w.u32(l.len() as u32);
                    w.u32s(l);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let h: Header = r.json()?;
        if h.topics.len() != h.count {
            return Err(Error::Format(format!("{} topic sets for {} items", h.topics.len(), h.count)));
        }
        let item_ids = r.u32s(h.count)?;
        let embeddings = r.f32s(h.count * h.dim)?;
        let popularity = (0..h.count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let graph = match h.ann {
            None => None,
            Some((config, entry)) => {
                let mut links = Vec::with_capacity(h.count);
                for _ in 0..h.count {
                    let levels = r.u32()? as usize;
                    if levels == 0 {
                        return Err(Error::Format("graph node without a base layer".into()));
                    }
                    let mut layers = Vec::with_capacity(levels);
                    for _ in 0..levels {
                        let n = r.u32()? as usize;
                        let l = r.u32s(n)?;
                        if l.iter().any(|&m| m as usize >= h.count) {
                            return Err(Error::Format("graph link out of range".into()));
                        }
                        layers.push(l);
                    }
                    links.push(layers);
                }
                if entry as usize >= h.count.max(1) {
                    return Err(Error::Format("graph entry out of range".into()));
                }
                Some(Graph { config, links, entry })
            }
        };
        r.finish()?;
        Ok(ItemIndex { dim: h.dim, item_ids, embeddings, topics: h.topics, popularity, graph })
    }
}

pub fn save_index(index: &ItemIndex, path: &Path) -> Result<()> {
    fileio::write_atomic(path, &index.to_bytes()?)
}

pub fn load_index(path: &Path) -> Result<ItemIndex> {
    ItemIndex::from_bytes(&fileio::read_all(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::tests::random_index;

    #[test]
    fn round_trip_with_and_without_graph() {
        let mut index = random_index(300, 6, 3);
        index.popularity = (0..300).map(|i| i * 7).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.idx");
        save_index(&index, &path).unwrap();
        assert_eq!(load_index(&path).unwrap(), index);
        index.build_ann(&AnnConfig::default()).unwrap();
        save_index(&index, &path).unwrap();
        let back = load_index(&path).unwrap();
        assert_eq!(back, index);
        assert!(back.embeddings.iter().zip(&index.embeddings).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_corruption() {
        let index = random_index(20, 4, 3);
        let bytes = index.to_bytes().unwrap();
        assert!(ItemIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ItemIndex::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(ItemIndex::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(load_index(Path::new("/nonexistent/x.idx")), Err(Error::File { .. })));
    }
}
