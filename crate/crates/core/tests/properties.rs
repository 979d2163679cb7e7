use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use trusdn::bench::column_stats;
use trusdn::channel::SecureChannel;
use trusdn::control::{Action, FlowKey, FlowMatch, FlowRule};
use trusdn::crypto::{
    epid_sign, epid_verify, hybrid_unwrap, hybrid_wrap, sign, sym_open, sym_seal, verify,
    EpidIssuer, GroupMemberSecret, GroupPublicKey, KeyOwner, KeyPair, KeyRole, PseudonymBase,
    SymmetricKey,
};
use trusdn::dataplane::Fib;
use trusdn::net::CtId;
use trusdn::wire::MsgType;

fn role() -> impl Strategy<Value = KeyRole> {
    prop_oneof![
        Just(KeyRole::SessionAlpha),
        Just(KeyRole::DomainBeta),
        Just(KeyRole::EphemeralEnc),
        Just(KeyRole::EphemeralMac),
        Just(KeyRole::FlowPsk),
        Just(KeyRole::ReportKey),
        Just(KeyRole::Derived),
    ]
}

fn flow() -> impl Strategy<Value = FlowKey> {
    (0u32..6, 0u32..6, any::<u16>(), any::<u16>(), prop_oneof![Just(6u8), Just(17u8)]).prop_map(
        |(s, d, sp, dp, proto)| FlowKey {
            src: CtId(s),
            dst: CtId(d),
            src_port: sp,
            dst_port: dp,
            proto,
        },
    )
}

proptest! {
    #[test]
    fn keys_of_different_roles_differ(a in role(), b in role(), bytes in any::<[u8; 32]>()) {
        let x = SymmetricKey::from_bytes(a, bytes);
        let y = SymmetricKey::from_bytes(b, bytes);
        prop_assert_eq!(x == y, a == b);
    }

    #[test]
    fn aead_rejects_every_single_bit_flip(
        key in any::<[u8; 32]>(),
        pt in proptest::collection::vec(any::<u8>(), 0..64),
        aad in proptest::collection::vec(any::<u8>(), 0..16),
        counter in any::<u64>(),
        bit in any::<prop::sample::Index>(),
    ) {
        let k = SymmetricKey::from_bytes(KeyRole::FlowPsk, key);
        let c = sym_seal(&k, 3, counter, &pt, &aad).unwrap();
        prop_assert_eq!(sym_open(&k, &c, &aad).unwrap(), pt.clone());
        let mut wire = c.to_bytes();
        let i = bit.index(wire.len() * 8);
        wire[i / 8] ^= 1 << (i % 8);
        let opened = trusdn::crypto::Ciphertext::from_bytes(&wire)
            .map(|bad| sym_open(&k, &bad, &aad));
        prop_assert!(!matches!(opened, Ok(Ok(ref p)) if *p == pt));
    }

    #[test]
    fn channel_accepts_in_order_and_rejects_stale(
        key in any::<[u8; 32]>(),
        msgs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..24), 1..12),
        replay in any::<prop::sample::Index>(),
    ) {
        let k = SymmetricKey::from_bytes(KeyRole::SessionAlpha, key);
        let mut nc = SecureChannel::controller_end(k.clone());
        let mut sw = SecureChannel::enclave_end(k);
        let sealed: Vec<_> = msgs.iter().map(|m| nc.seal(MsgType::RuleInstall, m).unwrap()).collect();
        for (m, c) in msgs.iter().zip(&sealed) {
            prop_assert_eq!(&sw.open(MsgType::RuleInstall, c).unwrap(), m);
        }
        let old = &sealed[replay.index(sealed.len())];
        prop_assert!(sw.open(MsgType::RuleInstall, old).is_err());
        // Reflection back at the sender fails on the nonce prefix.
        prop_assert!(nc.open(MsgType::RuleInstall, old).is_err());
    }

    #[test]
    fn canonical_flow_is_direction_free(f in flow()) {
        prop_assert_eq!(f.canonical(), f.reversed().canonical());
        prop_assert_eq!(f.canonical().canonical(), f.canonical());
        prop_assert!(f.canonical() == f || f.canonical() == f.reversed());
    }

    #[test]
    fn fib_exact_rule_wins_until_cleared(f in flow(), other in flow(), port in any::<u16>()) {
        let mut fib = Fib::new();
        prop_assert_eq!(fib.lookup(&f).action, Action::SendToController);
        fib.install(FlowRule { id: 7, matcher: FlowMatch::exact(&f), action: Action::ForwardLocal(port), priority: 100 });
        prop_assert_eq!(fib.lookup(&f).action, Action::ForwardLocal(port));
        if other != f {
            prop_assert_eq!(fib.lookup(&other).action, Action::SendToController);
        }
        fib.clear();
        prop_assert_eq!(fib.lookup(&f).action, Action::SendToController);
    }

    #[test]
    fn column_stats_order_facts(mut v in proptest::collection::vec(0u32..1_000_000, 1..50), seed in any::<u64>()) {
        let xs: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let s = column_stats(&xs).unwrap();
        prop_assert!(s.min <= s.median && s.median <= s.max);
        prop_assert!(s.min <= s.mean + 1e-9 && s.mean <= s.max + 1e-9);
        prop_assert!(s.stddev >= 0.0 && s.stddev <= (s.max - s.min) + 1e-9);
        // Order of the input does not matter.
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        v.shuffle(&mut rng);
        let ys: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let t = column_stats(&ys).unwrap();
        prop_assert_eq!((s.min, s.max, s.median), (t.min, t.max, t.median));
        prop_assert!((s.mean - t.mean).abs() < 1e-6 && (s.stddev - t.stddev).abs() < 1e-6);
    }
}

fn small_group() -> (GroupPublicKey, Vec<GroupMemberSecret>) {
    EpidIssuer::setup("prop", 3, &mut ChaCha20Rng::seed_from_u64(1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hybrid_and_schnorr_round_trip(seed in any::<u64>(), m in proptest::collection::vec(any::<u8>(), 1..64)) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let kp = KeyPair::generate(KeyOwner::Enclave, &mut rng);
        let other = KeyPair::generate(KeyOwner::Enclave, &mut rng);
        let c = hybrid_wrap(&kp.public(), &m, &mut rng).unwrap();
        prop_assert_eq!(hybrid_unwrap(kp.secret(), &c).unwrap(), m.clone());
        prop_assert!(hybrid_unwrap(other.secret(), &c).is_err());
        let s = sign(kp.secret(), &m);
        prop_assert!(verify(&kp.public(), &m, &s));
        prop_assert!(!verify(&other.public(), &m, &s));
        prop_assert_eq!(sign(kp.secret(), &m), s);
    }

    #[test]
    fn named_pseudonym_is_per_member_and_per_name(
        seed in any::<u64>(),
        who in 0usize..3,
        name in "[a-z]{1,8}",
        m in proptest::collection::vec(any::<u8>(), 0..32),
    ) {
        let (group, members) = small_group();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let base = PseudonymBase::named(name.clone());
        let a = epid_sign(&group, &members[who], &base, &m, &mut rng).unwrap();
        let b = epid_sign(&group, &members[who], &base, b"other", &mut rng).unwrap();
        let c = epid_sign(&group, &members[(who + 1) % 3], &base, &m, &mut rng).unwrap();
        let other_base = PseudonymBase::named(format!("{name}!"));
        let d = epid_sign(&group, &members[who], &other_base, &m, &mut rng).unwrap();
        prop_assert_eq!(a.pseudonym(), b.pseudonym());
        prop_assert_ne!(a.pseudonym(), c.pseudonym());
        prop_assert_ne!(a.pseudonym(), d.pseudonym());
        prop_assert!(epid_verify(&group, &base, &m, &a));
        let mut m2 = m.clone();
        m2.push(0);
        prop_assert!(!epid_verify(&group, &base, &m2, &a));
        prop_assert!(!epid_verify(&group, &other_base, &m, &a));
    }
}
