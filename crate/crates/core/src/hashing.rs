use sha2::{Digest, Sha256};

use crate::dataset::SessionCorpus;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &std::path::Path) -> crate::Result<String> {
    let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Content hash of a corpus: vocabulary ids and every session's items.
pub fn corpus_hash(corpus: &SessionCorpus) -> String {
    let mut h = Sha256::new();
    for id in corpus.vocab.ids() {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    h.update([0xffu8]);
    for s in &corpus.sessions {
        for &i in &s.items {
            h.update((i as u64).to_le_bytes());
        }
        h.update(u64::MAX.to_le_bytes());
    }
    hex::encode(h.finalize())
}
