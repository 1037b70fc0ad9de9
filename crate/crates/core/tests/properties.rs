//! Randomized invariants over the core primitives.

use proptest::prelude::*;

use trustpath::crypto::{hash, DeterministicRng, SymKey};
use trustpath::enclave::{measure, EnclaveImage};
use trustpath::tpm::{golden_pcr, Tpm};
use trustpath::trace::windows_absent;
use trustpath::trusted_path::{Direction, SessionEndpoint};

proptest! {
    /// Changing any page, the page order, or the debug flag changes the
    /// measurement.
    #[test]
    fn measurement_separates_images(
        pages in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..32), 1..6),
        flip_debug in any::<bool>(),
        idx in any::<prop::sample::Index>(),
    ) {
        let base = EnclaveImage::new(pages.clone(), false);
        let m = measure(&base);

        if flip_debug {
            prop_assert_ne!(m, measure(&EnclaveImage::new(pages.clone(), true)));
        }

        let i = idx.index(pages.len());
        let mut tampered = pages.clone();
        tampered[i].push(0xA5);
        prop_assert_ne!(m, measure(&EnclaveImage::new(tampered, false)));

        if pages.len() >= 2 && pages[0] != pages[1] {
            let mut swapped = pages.clone();
            swapped.swap(0, 1);
            prop_assert_ne!(m, measure(&EnclaveImage::new(swapped, false)));
        }
    }

    /// The register built by successive extends equals the reference
    /// computation over the same measurement list.
    #[test]
    fn tpm_extend_matches_reference(
        stages in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..24), 0..8),
        seed in any::<u64>(),
    ) {
        let mut rng = DeterministicRng::from_seed(seed);
        let mut tpm = Tpm::new("prop", &mut rng);
        let ms: Vec<_> = stages.iter().map(|s| hash(s)).collect();
        for m in &ms {
            tpm.extend(m);
        }
        prop_assert_eq!(tpm.pcr(), golden_pcr(&ms));
    }

    /// Any in-order subset of sent frames is accepted with the original
    /// payloads; re-delivering any accepted frame afterwards fails.
    #[test]
    fn session_frames_survive_loss_but_not_replay(
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..40), 1..10),
        keep in prop::collection::vec(any::<bool>(), 10),
        key in any::<[u8; 16]>(),
    ) {
        let mut sender = SessionEndpoint::new(SymKey(key), Direction::DriverToApp);
        let mut receiver = SessionEndpoint::new(SymKey(key), Direction::AppToDriver);
        let frames: Vec<_> = payloads.iter().map(|p| sender.send(p)).collect();
        let mut delivered = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            if keep[i % keep.len()] {
                prop_assert_eq!(&receiver.recv(f).unwrap(), &payloads[i]);
                delivered.push(f.clone());
            }
        }
        for f in &delivered {
            prop_assert!(receiver.recv(f).is_err());
        }
    }

    /// The window scan never misses a planted substring.
    #[test]
    fn window_scan_is_sound(
        haystack in prop::collection::vec(any::<u8>(), 0..64),
        needle in prop::collection::vec(any::<u8>(), 4..16),
        at in any::<prop::sample::Index>(),
    ) {
        let mut planted = haystack.clone();
        let pos = at.index(haystack.len() + 1);
        planted.splice(pos..pos, needle.iter().copied());
        prop_assert!(!windows_absent(&planted, &needle, 4));
    }
}
