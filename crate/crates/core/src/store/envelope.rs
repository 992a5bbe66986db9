//! Record envelope:
//!
//! ```text
//! len: u32 LE | version: u8 (= 1) | nonce: [u8; 24] | ciphertext || tag: [u8; 16]
//! ```
//!
//! `len` counts every byte after the length field. The length field and the
//! version byte are bound as associated data, so neither can be altered
//! without failing authentication.

use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{KeyInit, XChaCha20Poly1305, XNonce};
use rand::RngCore;

pub const VERSION: u8 = 1;
pub const LEN_BYTES: usize = 4;
pub const NONCE_BYTES: usize = 24;
pub const TAG_BYTES: usize = 16;
/// Smallest possible `len`: version, nonce and tag around an empty plaintext.
pub const MIN_LEN: usize = 1 + NONCE_BYTES + TAG_BYTES;
/// Lengths beyond this are treated as a torn or garbage tail.
pub const MAX_LEN: usize = 16 << 20;

pub type Key = [u8; 32];

pub fn cipher(key: &Key) -> XChaCha20Poly1305 {
    XChaCha20Poly1305::new(key.into())
}

pub fn random_key() -> Key {
    let mut k = [0u8; 32];
    rand::rng().fill_bytes(&mut k);
    k
}

fn aad(len: u32) -> [u8; 5] {
    let l = len.to_le_bytes();
    [l[0], l[1], l[2], l[3], VERSION]
}

pub fn seal(cipher: &XChaCha20Poly1305, plaintext: &[u8]) -> Vec<u8> {
    let len = (1 + NONCE_BYTES + plaintext.len() + TAG_BYTES) as u32;
    let mut nonce = [0u8; NONCE_BYTES];
    rand::rng().fill_bytes(&mut nonce);
    let ct = cipher
        .encrypt(
            XNonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &aad(len),
            },
        )
        .expect("XChaCha20-Poly1305 encryption is infallible for in-range sizes");
    let mut out = Vec::with_capacity(LEN_BYTES + len as usize);
    out.extend_from_slice(&len.to_le_bytes());
    out.push(VERSION);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

#[derive(Debug, PartialEq, Eq)]
pub enum Frame {
    /// Authenticated frame ending at `end`.
    Ok { plaintext: Vec<u8>, end: usize },
    /// Complete frame that failed authentication or has an unknown version.
    Corrupt { end: usize },
    /// Torn, truncated or nonsensical bytes from `offset` to the end.
    Tail,
    /// `offset` is exactly at the end of the buffer.
    End,
}

pub fn next_frame(cipher: &XChaCha20Poly1305, buf: &[u8], offset: usize) -> Frame {
    let rest = &buf[offset.min(buf.len())..];
    if rest.is_empty() {
        return Frame::End;
    }
    if rest.len() < LEN_BYTES {
        return Frame::Tail;
    }
    let len = u32::from_le_bytes(rest[..LEN_BYTES].try_into().expect("4 bytes"));
    let n = len as usize;
    if !(MIN_LEN..=MAX_LEN).contains(&n) || rest.len() < LEN_BYTES + n {
        return Frame::Tail;
    }
    let end = offset + LEN_BYTES + n;
    let body = &rest[LEN_BYTES..LEN_BYTES + n];
    if body[0] != VERSION {
        return Frame::Corrupt { end };
    }
    let nonce = XNonce::from_slice(&body[1..1 + NONCE_BYTES]);
    match cipher.decrypt(
        nonce,
        Payload {
            msg: &body[1 + NONCE_BYTES..],
            aad: &aad(len),
        },
    ) {
        Ok(plaintext) => Frame::Ok { plaintext, end },
        Err(_) => Frame::Corrupt { end },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_roundtrip() {
        let c = cipher(&[7u8; 32]);
        let sealed = seal(&c, b"hello");
        assert_eq!(sealed.len(), LEN_BYTES + 1 + NONCE_BYTES + 5 + TAG_BYTES);
        assert_eq!(u32::from_le_bytes(sealed[..4].try_into().unwrap()) as usize, sealed.len() - 4);
        assert_eq!(sealed[4], VERSION);
        assert!(!sealed.windows(5).any(|w| w == b"hello"));
        assert_eq!(
            next_frame(&c, &sealed, 0),
            Frame::Ok {
                plaintext: b"hello".to_vec(),
                end: sealed.len()
            }
        );
        assert_eq!(next_frame(&c, &sealed, sealed.len()), Frame::End);
    }

    #[test]
    fn tamper_and_truncation() {
        let c = cipher(&[1u8; 32]);
        let sealed = seal(&c, b"payload bytes");
        for i in 4..sealed.len() {
            let mut bad = sealed.clone();
            bad[i] ^= 0x40;
            assert_eq!(next_frame(&c, &bad, 0), Frame::Corrupt { end: sealed.len() }, "byte {i}");
        }
        for cut in 1..sealed.len() {
            assert_eq!(next_frame(&c, &sealed[..cut], 0), Frame::Tail, "cut {cut}");
        }
        let other = cipher(&[2u8; 32]);
        assert!(matches!(next_frame(&other, &sealed, 0), Frame::Corrupt { .. }));
    }
}
