mod common;

use vertfed::harness::{fit_method, MethodConfig};
use vertfed::ipw::IpwConfig;
use vertfed::mi::MiConfig;
use vertfed::netsim::{audit_ledger, audit_ledger_csv, LedgerDetail, MessageLedger, Network, PayloadKind};
use vertfed::{Method, SeedTree};

fn cfg() -> MethodConfig {
    MethodConfig {
        ipw: IpwConfig { bootstrap_b: 5, ..IpwConfig::default() },
        mi: MiConfig { m: 4, alpha_bootstrap_b: 5, ..MiConfig::default() },
    }
}

#[test]
fn distributed_methods_never_pool_or_leak_columns() {
    for method in [Method::Gs, Method::Cc, Method::PpipwV, Method::MiNaive, Method::PpmiV] {
        let ds = common::scenario_data(1, 150, 61);
        let mut net = Network::new(ds.n(), ds.layout().widths(), LedgerDetail::FullWithShares);
        fit_method(method, &ds, &cfg(), &mut net, &SeedTree::new(62)).unwrap();
        let report = audit_ledger(net.ledger(), &ds);
        assert_eq!(report.pooled_accesses, 0, "{method}");
        assert_eq!(report.non_allowlisted, 0, "{method}");
        assert_eq!(report.inconsistent_bytes, 0, "{method}");
        assert_eq!(report.cross_site_identity_shares(), 0, "{method}: {:?}", report.identity_shares);
        assert!(report.shares_checked > 0, "{method}");
    }
}

#[test]
fn pooled_baselines_are_visible_to_the_audit() {
    for method in [Method::IpwPooled, Method::MiPooled] {
        let ds = common::scenario_data(1, 150, 63);
        let mut net = Network::new(ds.n(), ds.layout().widths(), LedgerDetail::Full);
        fit_method(method, &ds, &cfg(), &mut net, &SeedTree::new(64)).unwrap();
        assert!(audit_ledger(net.ledger(), &ds).pooled_accesses > 0, "{method}");
    }
}

#[test]
fn exported_ledger_round_trips_and_audits_clean() {
    let ds = common::scenario_data(1, 150, 65);
    let mut net = Network::new(ds.n(), ds.layout().widths(), LedgerDetail::Full);
    fit_method(Method::PpipwV, &ds, &cfg(), &mut net, &SeedTree::new(66)).unwrap();
    let text = net.ledger().to_csv_string();
    let back = MessageLedger::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back.records(), net.ledger().records());
    let report = audit_ledger_csv(text.as_bytes()).unwrap();
    assert!(report.clean());
    assert_eq!(report.summary.total.messages, net.ledger().message_count());
}

#[test]
fn tampered_ledger_is_reported() {
    let text =
        "round,sender,receiver,kind,dims,bytes,phase\n1,1,0,RawColumn,150,1200,setup\n2,1,0,DeltaScalar,1,9,setup\n";
    let report = audit_ledger_csv(text.as_bytes()).unwrap();
    assert!(!report.clean());
    assert_eq!(report.non_allowlisted.len(), 1);
    assert_eq!(report.inconsistent_bytes.len(), 1);
    assert!(MessageLedger::read_csv(text.as_bytes()).is_err());
    assert!(!PayloadKind::ALL.iter().any(|k| k.name() == "RawColumn"));
}
