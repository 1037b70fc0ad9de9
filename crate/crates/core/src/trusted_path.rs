//! The encrypted user-app-to-driver channel: frame format, nonce
//! schedule, replay protection, and the driver's two-virtual-device
//! multiplexing mode.

use crate::crypto::{aead_open, aead_seal, AuthFailure, SymKey};

/// Direction of a frame on the channel. Encoded in the top bit of the
/// first nonce byte so the two directions never share a nonce.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    DriverToApp,
    AppToDriver,
}

impl Direction {
    fn bit(&self) -> u8 {
        match self {
            Direction::DriverToApp => 0x00,
            Direction::AppToDriver => 0x80,
        }
    }

    pub fn reverse(&self) -> Direction {
        match self {
            Direction::DriverToApp => Direction::AppToDriver,
            Direction::AppToDriver => Direction::DriverToApp,
        }
    }
}

/// Which virtual device the driver is currently writing.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PathMode {
    OsPassthrough,
    Trusted,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VirtualDeviceKind {
    Passthrough,
    EncryptedChar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("frame failed authentication")]
    AuthFailure,
    #[error("frame nonce counter regressed (replay)")]
    ReplayDetected,
    #[error("frame is malformed")]
    Malformed,
}

impl From<AuthFailure> for ChannelError {
    fn from(_: AuthFailure) -> Self {
        ChannelError::AuthFailure
    }
}

const CHANNEL_AAD: &[u8] = b"trusted-path";

fn frame_nonce(dir: Direction, counter: u64) -> [u8; 12] {
    let mut nonce = [0u8; 12];
    nonce[0] = dir.bit();
    nonce[4..].copy_from_slice(&counter.to_be_bytes());
    nonce
}

/// One side of an established trusted-path session. Holds the shared key
/// and strict monotonic counters for both directions.
pub struct SessionEndpoint {
    key: SymKey,
    send_dir: Direction,
    send_counter: u64,
    /// Next expected counter from the peer; anything below is a replay.
    recv_next: u64,
}

impl SessionEndpoint {
    pub fn new(key: SymKey, send_dir: Direction) -> Self {
        SessionEndpoint {
            key,
            send_dir,
            send_counter: 0,
            recv_next: 0,
        }
    }

    /// Encrypt a payload into a wire frame:
    /// 4-byte big-endian length || 12-byte nonce || ciphertext || tag.
    pub fn send(&mut self, payload: &[u8]) -> Vec<u8> {
        let nonce = frame_nonce(self.send_dir, self.send_counter);
        self.send_counter += 1;
        let ct = aead_seal(&self.key, &nonce, payload, CHANNEL_AAD);
        let body_len = (12 + ct.len()) as u32;
        let mut frame = body_len.to_be_bytes().to_vec();
        frame.extend_from_slice(&nonce);
        frame.extend_from_slice(&ct);
        frame
    }

    /// Authenticate and decrypt a frame from the peer.
    pub fn recv(&mut self, frame: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if frame.len() < 4 + 12 + 16 {
            return Err(ChannelError::Malformed);
        }
        let body_len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        if frame.len() != 4 + body_len {
            return Err(ChannelError::Malformed);
        }
        let nonce: [u8; 12] = frame[4..16].try_into().unwrap();
        let expect_dir = self.send_dir.reverse();
        if nonce[0] != expect_dir.bit() || nonce[1..4] != [0, 0, 0] {
            return Err(ChannelError::AuthFailure);
        }
        let counter = u64::from_be_bytes(nonce[4..].try_into().unwrap());
        if counter < self.recv_next {
            return Err(ChannelError::ReplayDetected);
        }
        let payload = aead_open(&self.key, &nonce, &frame[16..], CHANNEL_AAD)?;
        self.recv_next = counter + 1;
        Ok(payload)
    }

    pub fn key(&self) -> &SymKey {
        &self.key
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::DeterministicRng;

    fn pair() -> (SessionEndpoint, SessionEndpoint) {
        let key = SymKey([0x42; 16]);
        (
            SessionEndpoint::new(key, Direction::DriverToApp),
            SessionEndpoint::new(key, Direction::AppToDriver),
        )
    }

    #[test]
    fn roundtrip_random_payloads() {
        let (mut driver, mut app) = pair();
        let mut rng = DeterministicRng::from_seed(1);
        for _ in 0..50 {
            let n = 1 + (rng.bytes(1)[0] as usize % 64);
            let p = rng.bytes(n);
            let f = driver.send(&p);
            assert_eq!(app.recv(&f).unwrap(), p);
            let q = rng.bytes(8);
            let f2 = app.send(&q);
            assert_eq!(driver.recv(&f2).unwrap(), q);
        }
    }

    #[test]
    fn tampered_frame_rejected() {
        let (mut driver, mut app) = pair();
        let mut f = driver.send(b"keystroke");
        let last = f.len() - 1;
        f[last] ^= 1;
        assert_eq!(app.recv(&f), Err(ChannelError::AuthFailure));
    }

    #[test]
    fn replay_detected_after_later_frame() {
        let (mut driver, mut app) = pair();
        let f0 = driver.send(b"frame0");
        let f1 = driver.send(b"frame1");
        app.recv(&f0).unwrap();
        app.recv(&f1).unwrap();
        assert_eq!(app.recv(&f0), Err(ChannelError::ReplayDetected));
    }

    #[test]
    fn reordered_frame_is_accepted_then_earlier_rejected() {
        let (mut driver, mut app) = pair();
        let f0 = driver.send(b"a");
        let f1 = driver.send(b"b");
        // skipping ahead is allowed (lost frame), going back is not
        assert_eq!(app.recv(&f1).unwrap(), b"b");
        assert_eq!(app.recv(&f0), Err(ChannelError::ReplayDetected));
    }

    #[test]
    fn direction_confusion_rejected() {
        let (mut driver, _) = pair();
        let f = driver.send(b"loopback");
        // the sender must not accept its own frame back
        assert!(driver.recv(&f).is_err());
    }

    #[test]
    fn truncated_frames_malformed() {
        let (mut driver, mut app) = pair();
        let f = driver.send(b"x");
        assert_eq!(app.recv(&f[..10]), Err(ChannelError::Malformed));
        let mut short = f.clone();
        short.pop();
        assert_eq!(app.recv(&short), Err(ChannelError::Malformed));
    }

    #[test]
    fn frame_layout_is_length_prefixed() {
        let (mut driver, _) = pair();
        let f = driver.send(b"abc");
        let body_len = u32::from_be_bytes(f[..4].try_into().unwrap()) as usize;
        assert_eq!(f.len(), 4 + body_len);
        // nonce || ct(3) || tag(16)
        assert_eq!(body_len, 12 + 3 + 16);
    }
}
