//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! straight to stdout so the verdicts survive output capture.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use trusdn::attestation::{
    answer_challenge, anti_cuckoo_check, attest_enclave, issue_verifier_certificate,
    publish_platform_list, AttestPolicy, Evidence, EpidAuthority, PlatformSignatureList, Verdict,
    Verifier,
};
use trusdn::bench::{self, BenchConfig, BenchMode, BenchRecord};
use trusdn::control::FlowKey;
use trusdn::crypto::{
    epid_linked, epid_sign, hybrid_unwrap, hybrid_wrap, mac_check, mac_tag, sign, sym_open,
    sym_seal, verify, EpidIssuer, KeyOwner, KeyPair, KeyRole, LinkableSignature, PseudonymBase,
    SymmetricKey,
};
use trusdn::dataplane::{Packet, SwitchOutput};
use trusdn::enclave::{Datacenter, EnclaveId, EnclaveKind, Measurement, Platform, PlatformId};
use trusdn::endpoints::HandshakeMode;
use trusdn::harness::{run_scenario, Scenario};
use trusdn::net::{CtId, Direct, DomainId, Hop, NodeId, Segment};
use trusdn::sim::{Network, NetworkConfig, OpenRequest};
use trusdn::wire::MsgType;

fn verdict(criterion: u32, ok: bool, detail: &str) {
    let line = format!(
        "criterion {criterion}: {} {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

const BUNDLED: [&str; 7] = [
    "eavesdrop",
    "forge_rule",
    "replay_enrollment",
    "sybil_switch",
    "cuckoo",
    "tamper_beta",
    "degrade_network",
];

fn bundled(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenarios_dir().join(format!("{name}.json"))).unwrap();
    Scenario::from_json(&text).unwrap()
}

fn flip(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 1 << (bit % 8);
}

// ---------------------------------------------------------------------------
// 1. crypto round-trip, tamper rejection, linkability trichotomy

const CRYPTO_TRIALS: u64 = 10_000;

#[test]
fn criterion_1_protocol_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xc1);
    let mut failures = Vec::new();

    let roles = [
        KeyRole::SessionAlpha,
        KeyRole::DomainBeta,
        KeyRole::EphemeralEnc,
        KeyRole::FlowPsk,
    ];
    let mut aead = (0u64, 0u64);
    for t in 0..CRYPTO_TRIALS {
        let key = SymmetricKey::generate(roles[t as usize % roles.len()], &mut rng);
        let mut pt = vec![0u8; rng.gen_range(0..300)];
        rng.fill_bytes(&mut pt);
        let mut aad = vec![0u8; rng.gen_range(0..40)];
        rng.fill_bytes(&mut aad);
        let c = sym_seal(&key, rng.gen(), rng.gen(), &pt, &aad).unwrap();
        if sym_open(&key, &c, &aad).as_deref() == Ok(&pt[..]) {
            aead.0 += 1;
        }
        let mut bad = c.clone();
        match t % 3 {
            0 => {
                let bits = bad.body.len() * 8;
                flip(&mut bad.body, rng.gen_range(0..bits));
            }
            1 => flip(&mut bad.nonce, rng.gen_range(0..96)),
            _ => {}
        }
        let bad_aad = if t % 3 == 2 {
            let mut a = aad.clone();
            a.push(rng.gen());
            a
        } else {
            aad.clone()
        };
        if sym_open(&key, &bad, &bad_aad).is_err() {
            aead.1 += 1;
        }
    }
    if aead != (CRYPTO_TRIALS, CRYPTO_TRIALS) {
        failures.push(format!("aead {aead:?}"));
    }

    let mut mac = (0u64, 0u64);
    for t in 0..CRYPTO_TRIALS {
        let key = SymmetricKey::generate(KeyRole::EphemeralMac, &mut rng);
        let mut m = vec![0u8; rng.gen_range(1..200)];
        rng.fill_bytes(&mut m);
        let tag = mac_tag(&key, &m).unwrap();
        if mac_check(&key, &m, &tag.0) {
            mac.0 += 1;
        }
        let rejected = if t % 2 == 0 {
            let bits = m.len() * 8;
            flip(&mut m, rng.gen_range(0..bits));
            !mac_check(&key, &m, &tag.0)
        } else {
            let mut bad = tag.0;
            flip(&mut bad, rng.gen_range(0..256));
            !mac_check(&key, &m, &bad)
        };
        if rejected {
            mac.1 += 1;
        }
    }
    if mac != (CRYPTO_TRIALS, CRYPTO_TRIALS) {
        failures.push(format!("mac {mac:?}"));
    }

    let symmetric_secs = start.elapsed().as_secs_f64();
    let mut pke = (0u64, 0u64);
    let mut sig = (0u64, 0u64);
    for _ in 0..CRYPTO_TRIALS {
        let kp = KeyPair::generate(KeyOwner::ComputeTask, &mut rng);
        let mut m = vec![0u8; rng.gen_range(1..120)];
        rng.fill_bytes(&mut m);
        let c = hybrid_wrap(&kp.public(), &m, &mut rng).unwrap();
        if hybrid_unwrap(kp.secret(), &c).as_deref() == Ok(&m[..]) {
            pke.0 += 1;
        }
        let mut bad = c.clone();
        let bits = bad.len() * 8;
        flip(&mut bad, rng.gen_range(0..bits));
        if hybrid_unwrap(kp.secret(), &bad).is_err() {
            pke.1 += 1;
        }

        let s = sign(kp.secret(), &m);
        if verify(&kp.public(), &m, &s) {
            sig.0 += 1;
        }
        let mut bad_sig = s.clone();
        flip(&mut bad_sig.0, rng.gen_range(0..512));
        let mut bad_m = m.clone();
        let bits = bad_m.len() * 8;
        flip(&mut bad_m, rng.gen_range(0..bits));
        if !verify(&kp.public(), &m, &bad_sig) && !verify(&kp.public(), &bad_m, &s) {
            sig.1 += 1;
        }
    }
    if pke != (CRYPTO_TRIALS, CRYPTO_TRIALS) {
        failures.push(format!("hybrid {pke:?}"));
    }
    if sig != (CRYPTO_TRIALS, CRYPTO_TRIALS) {
        failures.push(format!("schnorr {sig:?}"));
    }

    let public_secs = start.elapsed().as_secs_f64() - symmetric_secs;
    // Same member under one named base links; different members or random
    // bases do not.
    let mut link = [0u64; 3];
    for t in 0..CRYPTO_TRIALS {
        let (group, members) = EpidIssuer::setup("acc", 2, &mut rng);
        let named = PseudonymBase::named(format!("verifier-{}", t % 17));
        let s1 = epid_sign(&group, &members[0], &named, b"m1", &mut rng).unwrap();
        let s2 = epid_sign(&group, &members[0], &named, b"m2", &mut rng).unwrap();
        let s3 = epid_sign(&group, &members[1], &named, b"m3", &mut rng).unwrap();
        let r1 = epid_sign(&group, &members[0], &PseudonymBase::random(&mut rng), b"m4", &mut rng).unwrap();
        let pair = |a: (&[u8], &LinkableSignature), b: (&[u8], &LinkableSignature)| epid_linked(&group, a, b);
        if pair((b"m1", &s1), (b"m2", &s2)) == Ok(true) {
            link[0] += 1;
        }
        if pair((b"m1", &s1), (b"m3", &s3)) == Ok(false) {
            link[1] += 1;
        }
        if pair((b"m2", &s2), (b"m4", &r1)) == Ok(false) {
            link[2] += 1;
        }
    }
    if link != [CRYPTO_TRIALS; 3] {
        failures.push(format!("linkability {link:?}"));
    }

    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    let detail = if failures.is_empty() {
        format!(
            "aead, mac, hybrid, schnorr and linkability: {CRYPTO_TRIALS} trials each in {secs:.1}s \
             (symmetric {symmetric_secs:.1}s, public-key {public_secs:.1}s, linkability {:.1}s)",
            secs - symmetric_secs - public_secs
        )
    } else {
        failures.join("; ")
    };
    verdict(1, failures.is_empty(), &detail);
}

// ---------------------------------------------------------------------------
// 2. attestation soundness

struct Site {
    dc: Datacenter,
    verifier: Verifier,
    enclave: EnclaveId,
}

const SWITCH_CODE: &[u8] = b"acceptance switch";

fn expected() -> Measurement {
    Measurement::compute(EnclaveKind::Switch, SWITCH_CODE, b"cfg")
}

fn site(seed: u64, members: usize) -> Site {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (group, secrets) = EpidIssuer::setup("acc-dc", members, &mut rng);
    let group = Arc::new(group);
    let mut dc = Datacenter::new();
    for (i, m) in secrets.into_iter().enumerate() {
        dc.insert(Platform::new(PlatformId(i as u32), group.clone(), m, rng.gen()));
    }
    let authority = EpidAuthority::new("epid-root", group, &mut rng);
    let mut verifier = Verifier::new("NC", &authority, rng.gen());
    let cert = issue_verifier_certificate(&authority, "NC", verifier.public_key(), 0, u64::MAX);
    verifier.set_certificate_chain(vec![cert]);
    let enclave = dc
        .get_mut(PlatformId(0))
        .unwrap()
        .create_enclave(EnclaveKind::Switch, SWITCH_CODE, b"cfg")
        .unwrap();
    Site {
        dc,
        verifier,
        enclave,
    }
}

/// Issues a challenge, answers it honestly, corrupts the evidence and judges
/// it. Evidence that no longer parses counts as a bad signature, as on the
/// wire.
fn judge_corrupted(s: &mut Site, now: u64, corrupt: impl FnOnce(&mut Evidence) -> bool) -> Verdict {
    let qe = s.dc.get(PlatformId(0)).unwrap().quoting_enclave();
    let ch = s.verifier.challenge(qe, PseudonymBase::named("NC"), now);
    let mut ev = answer_challenge(&mut s.dc, PlatformId(0), s.enclave, &ch).unwrap();
    if !corrupt(&mut ev) {
        return Verdict::BadSignature;
    }
    s.verifier.verify_evidence(&ch, &ev, &expected(), now).verdict
}

fn rebuild_sig(sig: &LinkableSignature, pseudonym: [u8; 32], proof: &[u8]) -> Option<LinkableSignature> {
    LinkableSignature::from_parts(pseudonym, sig.base().clone(), proof).ok()
}

#[test]
fn criterion_2_attestation_soundness() {
    let mut honest = 0;
    for seed in 0..1000u64 {
        let mut s = site(seed, 2 + (seed % 3) as usize);
        let base = if seed % 2 == 0 {
            PseudonymBase::named("NC")
        } else {
            PseudonymBase::random(&mut ChaCha20Rng::seed_from_u64(seed))
        };
        let r = attest_enclave(
            &mut s.verifier,
            NodeId::Controller,
            &mut s.dc,
            PlatformId(0),
            s.enclave,
            &expected(),
            base,
            AttestPolicy::default(),
            5,
            &mut Direct,
        )
        .unwrap();
        let pk = s.dc.get(PlatformId(0)).unwrap().public_key(s.enclave).unwrap();
        if r.verdict == Verdict::Accepted && r.enclave_pk == Some(pk) {
            honest += 1;
        }
    }

    // Every single-bit corruption of each field, on the evidence after
    // quoting.
    let mut s = site(77, 3);
    let mut cases = 0u64;
    let mut accepted = Vec::new();
    let mut tally = std::collections::BTreeMap::<String, u64>::new();
    let mut judge = |field: &str, v: Verdict, cases: &mut u64| {
        *cases += 1;
        *tally.entry(format!("{v:?}")).or_default() += 1;
        if v == Verdict::Accepted {
            accepted.push(field.to_owned());
        }
    };
    for bit in 0..256 {
        let v = judge_corrupted(&mut s, 10, |e| {
            flip(&mut e.quote.report.reporter_measurement.0, bit);
            true
        });
        judge("measurement", v, &mut cases);
        let v = judge_corrupted(&mut s, 10, |e| {
            flip(&mut e.quote.challenge_nonce, bit);
            true
        });
        judge("nonce", v, &mut cases);
        let v = judge_corrupted(&mut s, 10, |e| {
            flip(&mut e.quote.report.user_data, bit);
            true
        });
        judge("user_data", v, &mut cases);
        let v = judge_corrupted(&mut s, 10, |e| {
            flip(&mut e.quote.report.mac.0, bit);
            true
        });
        judge("report_mac", v, &mut cases);
        let v = judge_corrupted(&mut s, 10, |e| {
            let mut p = e.quote.signature.pseudonym();
            flip(&mut p, bit);
            match rebuild_sig(&e.quote.signature, p, &e.quote.signature.proof_bytes()) {
                Some(sig) => {
                    e.quote.signature = sig;
                    true
                }
                None => false,
            }
        });
        judge("signature.pseudonym", v, &mut cases);
    }
    let proof_bits = s_proof_len(&mut s) * 8;
    for bit in 0..proof_bits {
        let v = judge_corrupted(&mut s, 10, |e| {
            let mut proof = e.quote.signature.proof_bytes();
            flip(&mut proof, bit);
            match rebuild_sig(&e.quote.signature, e.quote.signature.pseudonym(), &proof) {
                Some(sig) => {
                    e.quote.signature = sig;
                    true
                }
                None => false,
            }
        });
        judge("signature.proof", v, &mut cases);
    }

    // Whole-field substitutions that keep the signature valid, each caught
    // by its own check.
    let mut semantic = Vec::new();
    {
        let other = KeyPair::generate(KeyOwner::Enclave, &mut ChaCha20Rng::seed_from_u64(3));
        semantic.push((
            "user_data",
            Verdict::UserDataMismatch,
            judge_corrupted(&mut s, 20, |e| {
                e.enclave_pk = other.public();
                true
            }),
        ));
        let qe = s.dc.get(PlatformId(0)).unwrap().quoting_enclave();
        let old = s.verifier.challenge(qe, PseudonymBase::named("NC"), 20);
        let old_ev = answer_challenge(&mut s.dc, PlatformId(0), s.enclave, &old).unwrap();
        let _ = s.verifier.verify_evidence(&old, &old_ev, &expected(), 20);
        let fresh = s.verifier.challenge(qe, PseudonymBase::named("NC"), 21);
        semantic.push((
            "nonce",
            Verdict::StaleNonce,
            s.verifier.verify_evidence(&fresh, &old_ev, &expected(), 21).verdict,
        ));
        let ch = s.verifier.challenge(qe, PseudonymBase::named("NC"), 22);
        let ev = answer_challenge(&mut s.dc, PlatformId(0), s.enclave, &ch).unwrap();
        let wrong = Measurement::compute(EnclaveKind::Switch, b"other code", b"cfg");
        semantic.push((
            "measurement",
            Verdict::MeasurementMismatch,
            s.verifier.verify_evidence(&ch, &ev, &wrong, 22).verdict,
        ));
        let ch = s.verifier.challenge(qe, PseudonymBase::named("NC"), 23);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let ev = answer_challenge(&mut s.dc, PlatformId(0), s.enclave, &ch).unwrap();
        let mut reb = ev.clone();
        let fake = PseudonymBase::random(&mut rng);
        reb.quote.signature = LinkableSignature::from_parts(
            ev.quote.signature.pseudonym(),
            fake,
            &ev.quote.signature.proof_bytes(),
        )
        .unwrap();
        semantic.push((
            "signature.base",
            Verdict::BadSignature,
            s.verifier.verify_evidence(&ch, &reb, &expected(), 23).verdict,
        ));
    }
    let semantic_ok = semantic.iter().all(|(_, want, got)| want == got);

    // A report MAC corrupted before quoting is refused by the honest QE.
    let mut refused = 0;
    for bit in 0..256 {
        let p = s.dc.get(PlatformId(0)).unwrap();
        let mut report = p
            .ereport(s.enclave, p.quoting_enclave(), [7u8; 32])
            .unwrap();
        flip(&mut report.mac.0, bit);
        if s.dc
            .qe_quote(PlatformId(0), &report, [1u8; 32], &PseudonymBase::named("NC"))
            .is_err()
        {
            refused += 1;
        }
    }

    let ok = honest == 1000 && accepted.is_empty() && semantic_ok && refused == 256;
    let detail = format!(
        "honest {honest}/1000 accepted; {cases} single-bit corruptions, {} accepted, verdicts {tally:?}; \
         field substitutions {}; pre-quote MAC corruptions refused {refused}/256",
        accepted.len(),
        semantic
            .iter()
            .map(|(f, want, got)| format!("{f}:{got:?}{}", if want == got { "" } else { "(unexpected)" }))
            .collect::<Vec<_>>()
            .join(","),
    );
    verdict(2, ok, &detail);
}

fn s_proof_len(s: &mut Site) -> usize {
    let qe = s.dc.get(PlatformId(0)).unwrap().quoting_enclave();
    let ch = s.verifier.challenge(qe, PseudonymBase::named("NC"), 0);
    let ev = answer_challenge(&mut s.dc, PlatformId(0), s.enclave, &ch).unwrap();
    ev.quote.signature.proof_bytes().len()
}

// ---------------------------------------------------------------------------
// 3. cuckoo defense

struct Cluster {
    dc: Datacenter,
    tenant: Verifier,
    list: PlatformSignatureList,
}

/// `n` platforms; the first `listed` are honest and published, the rest are
/// attacker-controlled and off the list.
fn cluster(n: usize, listed: usize, seed: u64) -> Cluster {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (group, secrets) = EpidIssuer::setup("acc-cuckoo", n, &mut rng);
    let group = Arc::new(group);
    let mut dc = Datacenter::new();
    for (i, m) in secrets.into_iter().enumerate() {
        let mut p = Platform::new(PlatformId(i as u32), group.clone(), m, rng.gen());
        p.honest = i < listed;
        dc.insert(p);
    }
    let authority = EpidAuthority::new("epid-root", group, &mut rng);
    let mut vp = Verifier::new("V_P", &authority, rng.gen());
    let cert = issue_verifier_certificate(&authority, "V_P", vp.public_key(), 0, u64::MAX);
    vp.set_certificate_chain(vec![cert]);
    let mut tenant = Verifier::new("tenant", &authority, rng.gen());
    let cert = issue_verifier_certificate(&authority, "tenant", tenant.public_key(), 0, u64::MAX);
    tenant.set_certificate_chain(vec![cert]);
    let ids: Vec<PlatformId> = (0..listed as u32).map(PlatformId).collect();
    let (list, failures) = publish_platform_list(&vp, &mut dc, &ids, 1, 0).unwrap();
    assert!(failures.is_empty());
    assert_eq!(list.entries.len(), listed);
    Cluster { dc, tenant, list }
}

/// Every map from platform to "no redirect" or another platform.
fn redirect_configs(n: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![vec![]];
    for p in 0..n {
        let mut next = Vec::new();
        for prefix in &out {
            for choice in std::iter::once(None).chain((0..n).filter(|&q| q != p).map(Some)) {
                let mut c = prefix.clone();
                c.push(choice);
                next.push(c);
            }
        }
        out = next;
    }
    out
}

#[test]
fn criterion_3_cuckoo_defense() {
    let mut checks = 0u64;
    let mut configs = 0u64;
    let mut mismatches = Vec::new();
    for n in 1..=5usize {
        for listed in 0..=n {
            let mut c = cluster(n, listed, (n * 10 + listed) as u64);
            let all = redirect_configs(n);
            // For five platforms the maps are taken up to relabeling inside
            // the listed and the off-list group; smaller sizes run every map,
            // which also exercises that symmetry.
            let chosen: BTreeSet<Vec<Option<usize>>> = if n <= 4 {
                all.into_iter().collect()
            } else {
                all.iter().map(|cfg| canonical_config(cfg, listed)).collect()
            };
            for cfg in &chosen {
                configs += 1;
                for (p, r) in cfg.iter().enumerate() {
                    c.dc.get_mut(PlatformId(p as u32)).unwrap().redirect_target = r.map(|q| PlatformId(q as u32));
                }
                for (p, r) in cfg.iter().enumerate() {
                    checks += 1;
                    let got = anti_cuckoo_check(&mut c.tenant, &mut c.dc, PlatformId(p as u32), &c.list, 1).unwrap();
                    let want = p < listed && r.is_none();
                    if got != want {
                        mismatches.push(format!("n={n} listed={listed} cfg={cfg:?} p={p} got {got}"));
                    }
                }
            }
        }
    }

    // Without the check a redirect to an attacker platform is accepted;
    // with it the same attestation is flagged.
    let mut accepted_without = 0;
    let mut flagged_with = 0;
    let mut redirects = 0;
    for n in 2..=5usize {
        for listed in 1..n {
            let c = cluster(n, listed, 500 + (n * 10 + listed) as u64);
            let Cluster { mut dc, mut tenant, list } = c;
            for victim in 0..listed {
                let e = dc
                    .get_mut(PlatformId(victim as u32))
                    .unwrap()
                    .create_enclave(EnclaveKind::Switch, SWITCH_CODE, b"cfg")
                    .unwrap();
                for target in listed..n {
                    redirects += 1;
                    dc.get_mut(PlatformId(victim as u32)).unwrap().redirect_target = Some(PlatformId(target as u32));
                    let mut run = |policy: AttestPolicy<'_>, base: PseudonymBase| {
                        attest_enclave(
                            &mut tenant,
                            NodeId::Controller,
                            &mut dc,
                            PlatformId(victim as u32),
                            e,
                            &expected(),
                            base,
                            policy,
                            1,
                            &mut Direct,
                        )
                        .unwrap()
                        .verdict
                    };
                    let base = PseudonymBase::random(&mut ChaCha20Rng::seed_from_u64(redirects));
                    if run(AttestPolicy::default(), base.clone()) == Verdict::Accepted {
                        accepted_without += 1;
                    }
                    if run(AttestPolicy { anti_cuckoo: Some(&list) }, base) == Verdict::CuckooSuspected {
                        flagged_with += 1;
                    }
                }
                dc.get_mut(PlatformId(victim as u32)).unwrap().redirect_target = None;
            }
        }
    }

    let ok = mismatches.is_empty() && accepted_without == redirects && flagged_with == redirects;
    let mut detail = format!(
        "{checks} checks over {configs} redirect configurations (all maps for n<=4, relabeling orbits for n=5), {} mismatches; \
         check disabled: {accepted_without}/{redirects} redirected attestations accepted; \
         enabled: {flagged_with}/{redirects} flagged",
        mismatches.len()
    );
    if let Some(m) = mismatches.first() {
        detail.push_str(&format!("; first mismatch {m}"));
    }
    verdict(3, ok, &detail);
}

/// Lexicographically smallest relabeling of `cfg` that keeps listed
/// platforms listed and off-list platforms off the list.
fn canonical_config(cfg: &[Option<usize>], listed: usize) -> Vec<Option<usize>> {
    let n = cfg.len();
    let groups = [(0..listed).collect::<Vec<_>>(), (listed..n).collect::<Vec<_>>()];
    let mut best: Option<Vec<Option<usize>>> = None;
    for pa in permutations(&groups[0]) {
        for pb in permutations(&groups[1]) {
            let mut map = vec![0; n];
            for (i, &orig) in groups[0].iter().enumerate() {
                map[orig] = pa[i];
            }
            for (i, &orig) in groups[1].iter().enumerate() {
                map[orig] = pb[i];
            }
            let mut relabeled = vec![None; n];
            for (p, r) in cfg.iter().enumerate() {
                relabeled[map[p]] = r.map(|q| map[q]);
            }
            if best.as_ref().is_none_or(|b| relabeled < *b) {
                best = Some(relabeled);
            }
        }
    }
    best.unwrap()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// 4. flow setup semantics

#[test]
fn criterion_4_flow_semantics() {
    let hosts = 3u32;
    let mut net = Network::new(NetworkConfig::new(404, hosts)).unwrap();
    for h in 0..hosts {
        net.deploy_switch(h, DomainId(0)).unwrap();
    }
    let mut cts: Vec<(CtId, u32)> = Vec::new();
    for h in 0..hosts {
        for _ in 0..2 {
            cts.push((net.deploy_ct(h).unwrap(), h));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(44);
    let mut flows = Vec::new();
    for i in 0..1000u16 {
        let a = rng.gen_range(0..cts.len());
        let b = (a + rng.gen_range(1..cts.len())) % cts.len();
        let (src, hs) = cts[a];
        let (dst, hd) = cts[b];
        let at = i as u64 * 3;
        net.schedule_open(
            at,
            OpenRequest {
                src,
                dst,
                src_port: 10_000 + i,
                dst_port: 443,
                mode: HandshakeMode::Psk,
                payloads: vec![],
            },
        );
        flows.push((
            FlowKey {
                src,
                dst,
                src_port: 10_000 + i,
                dst_port: 443,
                proto: 6,
            },
            hs == hd,
        ));
    }
    assert!(net.run_to_quiescence(100_000));

    let mut bad = Vec::new();
    let mut expected_installs = 0u64;
    for (f, same) in &flows {
        let want = if *same { 1 } else { 2 };
        expected_installs += want;
        match net.controller().flow(f) {
            Some(e) if e.packet_ins == 1 && e.grants_issued == 1 && e.install_messages == want => {}
            Some(e) => bad.push(format!(
                "{f:?}: packet_ins {} grants {} installs {}",
                e.packet_ins, e.grants_issued, e.install_messages
            )),
            None => bad.push(format!("{f:?}: unknown")),
        }
    }
    // Independent count from the wire.
    let count = |net: &Network, tag| {
        net.tap()
            .transcript()
            .iter()
            .filter(|e| e.tag == tag && !e.injected)
            .count() as u64
    };
    let wire = (
        count(&net, MsgType::PacketIn),
        count(&net, MsgType::PskGrant),
        count(&net, MsgType::RuleInstall),
    );
    let m = net.metrics();
    let received = m["ct.grants_received"];
    let fresh_ok = bad.is_empty() && wire == (1000, 2000, expected_installs) && received == 2000;
    let grants_before = net.controller().metrics().grants_issued;

    // Replays of every recorded packet-in.
    let recorded: Vec<(Hop, Vec<u8>)> = net
        .tap()
        .transcript()
        .iter()
        .filter(|e| e.tag == MsgType::PacketIn)
        .map(|e| (e.hop, e.bytes.clone()))
        .collect();
    let rejected_before = net.controller().metrics().rejected_messages;
    let now = net.now();
    for (i, (hop, bytes)) in recorded.iter().enumerate() {
        net.inject(now + 1 + i as u64 / 10, *hop, bytes.clone()).unwrap();
    }
    assert!(net.run_to_quiescence(now + 10_000));
    let replays_rejected = net.controller().metrics().rejected_messages - rejected_before;

    // Fresh, authentic duplicates: the ingress switch loses its rules and
    // reports the flow again.
    let mut duplicates = 0;
    for (f, _) in flows.iter().take(100) {
        let sw = net.controller().view().compute_tasks[&f.src].switch;
        let now = net.now();
        let out = net
            .with_switch(sw, |st| {
                st.clear_rules();
                st.switch_ingress(Packet::new(*f, 99, b"again".to_vec()).unwrap(), now)
            })
            .unwrap()
            .unwrap();
        for o in out {
            if let SwitchOutput::ToController { tag: MsgType::PacketIn, bytes } = o {
                duplicates += 1;
                let hop = Hop {
                    from: NodeId::Switch(sw),
                    to: NodeId::Controller,
                    segment: Segment::Alpha,
                };
                net.inject(now + 1, hop, bytes).unwrap();
            }
        }
        assert!(net.run_to_quiescence(now + 10_000));
    }

    // Both directions reported at once while the flow is still pending.
    let (a, b) = (cts[0].0, cts[4].0);
    let now = net.now();
    for (src, dst, sp, dp) in [(a, b, 9_000, 9_001), (b, a, 9_001, 9_000)] {
        net.schedule_open(
            now,
            OpenRequest {
                src,
                dst,
                src_port: sp,
                dst_port: dp,
                mode: HandshakeMode::Psk,
                payloads: vec![],
            },
        );
    }
    net.run_to_quiescence(now + 10_000);
    let racing = FlowKey {
        src: a,
        dst: b,
        src_port: 9_000,
        dst_port: 9_001,
        proto: 6,
    };
    let race = net.controller().flow(&racing).map(|e| (e.packet_ins, e.grants_issued));

    let nc = net.controller().metrics();
    let extra_grants = nc.grants_issued - grants_before - 1;
    let ok = fresh_ok && extra_grants == 0 && replays_rejected == recorded.len() as u64 && duplicates == 100 && race == Some((2, 1));
    let detail = format!(
        "1000 flows: {} per-flow mismatches; wire packet_in/grant/install = {wire:?} \
         (expected (1000, 2000, {expected_installs})); grants received {received}; \
         {replays_rejected}/{} replayed packet-ins rejected, {duplicates} fresh duplicates, racing pair {race:?}; \
         additional grants {extra_grants}",
        bad.len(),
        recorded.len(),
    );
    verdict(4, ok, &detail);
}

// ---------------------------------------------------------------------------
// 5. security scenarios

const SEEDS: u64 = 100;

#[test]
fn criterion_5_security_scenarios() {
    let mut runs = 0;
    let mut failed = Vec::new();
    let mut key_windows = 0;
    for name in BUNDLED {
        let s = bundled(name);
        for seed in 0..SEEDS {
            runs += 1;
            let r = run_scenario(&s, seed).unwrap();
            key_windows += r.metrics["sim.key_leaks"];
            if !r.passed() {
                let bad: Vec<_> = r.assertions.iter().filter(|(_, ok)| !**ok).map(|(a, _)| format!("{a:?}")).collect();
                failed.push(format!("{name}@{seed}: {}", bad.join(",")));
            }
        }
    }
    // The binary itself, at each file's own seed.
    let mut exit_codes = Vec::new();
    for name in BUNDLED {
        let out = Command::new(env!("CARGO_BIN_EXE_trusdn"))
            .arg("run")
            .arg(scenarios_dir().join(format!("{name}.json")))
            .env_remove("TRUSDN_SEED")
            .output()
            .unwrap();
        exit_codes.push(out.status.code());
    }
    let cli_ok = exit_codes.iter().all(|c| *c == Some(0));
    let ok = failed.is_empty() && key_windows == 0 && cli_ok;
    let mut detail = format!(
        "{runs} runs ({} scenarios x {SEEDS} seeds): {} failed; key windows in transcripts {key_windows}; cli exit codes {exit_codes:?}",
        BUNDLED.len(),
        failed.len()
    );
    if let Some(f) = failed.first() {
        detail.push_str(&format!("; first failure {f}"));
    }
    verdict(5, ok, &detail);
}

// ---------------------------------------------------------------------------
// 6. handshake cost, first-packet latency, summary statistics

fn session_costs(psk: bool, seed: u64) -> Vec<(u32, u32, u32)> {
    let mut cfg = NetworkConfig::new(seed, 2);
    cfg.distribute_psk = psk;
    let mut net = Network::new(cfg).unwrap();
    net.deploy_switch(0, DomainId(0)).unwrap();
    net.deploy_switch(1, DomainId(0)).unwrap();
    let a = net.deploy_ct(0).unwrap();
    let b = net.deploy_ct(1).unwrap();
    if !psk {
        net.distribute_peer_keys().unwrap();
    }
    let mode = if psk { HandshakeMode::Psk } else { HandshakeMode::BaselinePk };
    let mut out = Vec::new();
    for i in 0..20u16 {
        let now = net.now();
        net.schedule_open(
            now,
            OpenRequest {
                src: a,
                dst: b,
                src_port: 3000 + i,
                dst_port: 443,
                mode,
                payloads: vec![vec![1, 2, 3]],
            },
        );
        assert!(net.run_to_quiescence(now + 5_000));
        let f = FlowKey {
            src: a,
            dst: b,
            src_port: 3000 + i,
            dst_port: 443,
            proto: 6,
        };
        let client = net.with_ct(a, |st| st.session(&f).map(|s| (s.established, s.handshake_pk_ops, s.handshake_messages))).unwrap();
        let server = net.with_ct(b, |st| st.session(&f).map(|s| (s.established, s.handshake_pk_ops))).unwrap();
        let (Some((true, cops, msgs)), Some((true, sops))) = (client, server) else {
            out.push((u32::MAX, u32::MAX, u32::MAX));
            continue;
        };
        out.push((cops, sops, msgs));
    }
    out
}

struct Oracle {
    min: f64,
    max: f64,
    mean: f64,
    median: f64,
    stddev: f64,
}

/// Exact integer arithmetic and a counting median, sharing no code with the
/// library.
fn oracle(values: &[u64]) -> Oracle {
    let n = values.len() as u128;
    let sum: u128 = values.iter().map(|&v| v as u128).sum();
    let sq: u128 = values.iter().map(|&v| (v as u128) * (v as u128)).sum();
    // Population variance = (n*sq - sum^2) / n^2, exact in integers.
    let num = n * sq - sum * sum;
    let var = num as f64 / (n * n) as f64;
    let rank = |k: usize| -> u64 {
        *values
            .iter()
            .find(|&&v| {
                let below = values.iter().filter(|&&w| w < v).count();
                let at_most = values.iter().filter(|&&w| w <= v).count();
                below <= k && k < at_most
            })
            .unwrap()
    };
    let len = values.len();
    let median = if len % 2 == 1 {
        rank(len / 2) as f64
    } else {
        (rank(len / 2 - 1) as f64 + rank(len / 2) as f64) / 2.0
    };
    Oracle {
        min: *values.iter().min().unwrap() as f64,
        max: *values.iter().max().unwrap() as f64,
        mean: sum as f64 / n as f64,
        median,
        stddev: var.sqrt(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// Columns parsed straight from the CSV text.
fn raw_columns(path: &Path) -> (Vec<String>, Vec<Vec<u64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for line in lines {
        for (i, field) in line.split(',').enumerate() {
            if let Ok(v) = field.parse::<u64>() {
                cols[i].push(v);
            }
        }
    }
    (header, cols)
}

#[test]
fn criterion_6_handshake_latency_summary() {
    // (a) per-endpoint public-key operations and message count.
    let psk = session_costs(true, 61);
    let pk = session_costs(false, 61);
    let psk_ok = psk.iter().all(|&(c, s, m)| c == 0 && s == 0 && m <= 3);
    let pk_ok = pk.iter().all(|&(c, s, m)| c >= 2 && s >= 2 && m != u32::MAX);
    let rows_psk = bench::run_bench(&BenchConfig::new(30, 2, BenchMode::Psk, 62)).unwrap();
    let rows_pk = bench::run_bench(&BenchConfig::new(30, 2, BenchMode::Pk, 62)).unwrap();
    let bench_a = rows_psk.iter().all(|r| r.handshake_pk_ops == 0 && r.handshake_messages <= 3)
        && rows_pk.iter().all(|r| r.handshake_pk_ops >= 4);
    let a_ok = psk_ok && pk_ok && bench_a;

    // (b) PSK first packet = no-PSK first packet + the two grant messages.
    let mut deltas = BTreeSet::new();
    for cross_host in [false, true] {
        let mk = |mode| BenchConfig {
            cross_host,
            ..BenchConfig::new(25, 2, mode, 63)
        };
        let p = bench::run_bench(&mk(BenchMode::Psk)).unwrap();
        let q = bench::run_bench(&mk(BenchMode::Pk)).unwrap();
        for (x, y) in p.iter().zip(&q) {
            deltas.insert(x.first_packet_ticks as i64 - y.first_packet_ticks as i64);
        }
    }
    let b_ok = deltas.len() == 1 && deltas.contains(&2);

    // (c) summary statistics against the oracle, on bench output and on
    // random columns.
    let dir = tempfile::tempdir().unwrap();
    let mut c_fail = Vec::new();
    let mut compared = 0;
    for (i, rows) in [&rows_psk, &rows_pk].into_iter().enumerate() {
        let path = dir.path().join(format!("bench{i}.csv"));
        bench::write_csv(&path, rows).unwrap();
        let back = bench::read_csv(&path).unwrap();
        let (header, cols) = raw_columns(&path);
        for (name, stats) in bench::summarize(&back) {
            let idx = header.iter().position(|h| h == name).unwrap();
            let o = oracle(&cols[idx]);
            compared += 1;
            for (what, got, want) in [
                ("min", stats.min, o.min),
                ("max", stats.max, o.max),
                ("mean", stats.mean, o.mean),
                ("median", stats.median, o.median),
                ("stddev", stats.stddev, o.stddev),
            ] {
                if !close(got, want) {
                    c_fail.push(format!("{name}.{what}: {got} vs {want}"));
                }
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(66);
    for _ in 0..2000 {
        let len = rng.gen_range(1..60);
        let values: Vec<u64> = (0..len).map(|_| rng.gen_range(0..1_000_000_000)).collect();
        let floats: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let s = bench::column_stats(&floats).unwrap();
        let o = oracle(&values);
        compared += 1;
        for (got, want) in [
            (s.min, o.min),
            (s.max, o.max),
            (s.mean, o.mean),
            (s.median, o.median),
            (s.stddev, o.stddev),
        ] {
            if !close(got, want) {
                c_fail.push(format!("{values:?}: {got} vs {want}"));
            }
        }
    }
    // The CLI prints the same numbers, to three decimals.
    let path = dir.path().join("bench0.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_trusdn"))
        .arg("summary")
        .arg(&path)
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let (header, cols) = raw_columns(&path);
    let mut cli_rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let idx = header.iter().position(|h| h == f[0]).unwrap();
        let o = oracle(&cols[idx]);
        let printed: Vec<f64> = f[1..].iter().map(|x| x.parse().unwrap()).collect();
        for (got, want) in printed.iter().zip([o.min, o.max, o.mean, o.median, o.stddev]) {
            if (got - want).abs() > 5e-4 {
                c_fail.push(format!("cli {}: {got} vs {want}", f[0]));
            }
        }
        cli_rows += 1;
    }
    let c_ok = c_fail.is_empty() && cli_rows == 5 && out.status.success();

    let ok = a_ok && b_ok && c_ok;
    let pk_min = pk.iter().map(|&(c, s, _)| c.min(s)).min().unwrap_or(0);
    let mut detail = format!(
        "(a) psk pk-ops/endpoint 0, messages <= 3: {psk_ok}; baseline pk-ops/endpoint >= {pk_min}: {pk_ok}; bench rows: {bench_a} \
         (b) psk minus no-psk first-packet ticks {deltas:?} \
         (c) {compared} columns within 1e-9, cli rows {cli_rows}, {} mismatches",
        c_fail.len()
    );
    if let Some(f) = c_fail.first() {
        detail.push_str(&format!("; first {f}"));
    }
    verdict(6, ok, &detail);
}

// ---------------------------------------------------------------------------
// 7. determinism

#[test]
fn criterion_7_determinism() {
    let mut pairs = 0;
    let mut diverged = Vec::new();
    for name in BUNDLED.iter().chain(std::iter::once(&"failing_liveness")) {
        let s = bundled(name);
        for seed in [0, 1, 7, s.seed, 0xdead_beef] {
            pairs += 1;
            let a = run_scenario(&s, seed).unwrap();
            let b = run_scenario(&s, seed).unwrap();
            if a != b {
                diverged.push(format!("{name}@{seed}"));
            }
        }
    }
    // Separate processes agree too.
    let mut cli_pairs = 0;
    for name in BUNDLED {
        let run = || {
            Command::new(env!("CARGO_BIN_EXE_trusdn"))
                .arg("run")
                .arg(scenarios_dir().join(format!("{name}.json")))
                .env("TRUSDN_SEED", "4242")
                .output()
                .unwrap()
                .stdout
        };
        cli_pairs += 1;
        if run() != run() {
            diverged.push(format!("cli {name}"));
        }
    }
    // Tick and count columns of the bench are seed-determined.
    let ticks = |rows: Vec<BenchRecord>| -> Vec<(u64, u64, u64, u64)> {
        rows.iter()
            .map(|r| (r.flow, r.first_packet_ticks, r.handshake_messages, r.handshake_pk_ops))
            .collect()
    };
    let cfg = BenchConfig::new(10, 3, BenchMode::Psk, 71);
    if ticks(bench::run_bench(&cfg).unwrap()) != ticks(bench::run_bench(&cfg).unwrap()) {
        diverged.push("bench".into());
    }
    let ok = diverged.is_empty();
    let detail = format!(
        "{pairs} (scenario, seed) pairs and {cli_pairs} cli runs repeated with identical digests and reports; diverged: {diverged:?}"
    );
    verdict(7, ok, &detail);
}
