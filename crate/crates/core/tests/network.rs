use trusdn::control::FlowKey;
use trusdn::endpoints::HandshakeMode;
use trusdn::net::{CtId, DomainId};
use trusdn::sim::{Network, NetworkConfig, OpenRequest};

fn two_hosts(seed: u64, psk: bool) -> (Network, [CtId; 3]) {
    let mut cfg = NetworkConfig::new(seed, 2);
    cfg.distribute_psk = psk;
    let mut net = Network::new(cfg).unwrap();
    net.deploy_switch(0, DomainId(0)).unwrap();
    net.deploy_switch(1, DomainId(0)).unwrap();
    let a = net.deploy_ct(0).unwrap();
    let b = net.deploy_ct(0).unwrap();
    let c = net.deploy_ct(1).unwrap();
    (net, [a, b, c])
}

fn open(net: &mut Network, src: CtId, dst: CtId, port: u16, mode: HandshakeMode) -> FlowKey {
    let at = net.now();
    net.schedule_open(
        at,
        OpenRequest {
            src,
            dst,
            src_port: port,
            dst_port: 443,
            mode,
            payloads: vec![b"attack at dawn, bring snacks".to_vec()],
        },
    );
    FlowKey {
        src,
        dst,
        src_port: port,
        dst_port: 443,
        proto: 6,
    }
}

fn first_packet(net: &Network, f: &FlowKey) -> u64 {
    let t = net.timing(f).unwrap();
    t.first_delivery.unwrap() - t.opened_at
}

#[test]
fn first_packet_latency_structure() {
    let (mut psk, [a, b, c]) = two_hosts(1, true);
    let (mut plain, _) = two_hosts(1, false);
    let same = open(&mut psk, a, b, 1000, HandshakeMode::Psk);
    let same_plain = open(&mut plain, a, b, 1000, HandshakeMode::BaselinePk);
    plain.distribute_peer_keys().unwrap();
    assert!(psk.run_to_quiescence(10_000));
    assert!(plain.run_to_quiescence(10_000));
    assert_eq!(first_packet(&psk, &same), 6);
    assert_eq!(first_packet(&plain, &same_plain), 4);

    let cross = open(&mut psk, a, c, 1001, HandshakeMode::Psk);
    let cross_plain = open(&mut plain, a, c, 1001, HandshakeMode::BaselinePk);
    assert!(psk.run_to_quiescence(20_000));
    assert!(plain.run_to_quiescence(20_000));
    assert_eq!(first_packet(&psk, &cross), 8);
    assert_eq!(first_packet(&plain, &cross_plain), 6);

    for net in [&mut psk, &mut plain] {
        for (flow, peer) in [(same, b), (cross, c)] {
            let s = net.with_ct(a, |st| st.session(&flow).map(|s| (s.established, s.session_key().cloned()))).unwrap();
            let r = net.with_ct(peer, |st| {
                let s = st.session(&flow)?;
                Some((s.established, s.session_key().cloned(), st.secure_recv(&flow).ok()?.to_vec()))
            });
            let (est, key) = s.unwrap();
            let (est2, key2, got) = r.unwrap().unwrap();
            assert!(est && est2);
            assert_eq!(key, key2);
            assert_eq!(got, vec![b"attack at dawn, bring snacks".to_vec()]);
        }
        assert!(net.safety().violations().is_empty());
        assert_eq!(net.key_leaks(), 0);
        assert_eq!(net.payload_leaks(), 0);
    }
}
