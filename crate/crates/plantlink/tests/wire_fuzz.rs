use acfleet_core::house::{Compressor, HouseId, SwitchTarget};
use acfleet_core::plant::{DeviceCommand, DeviceReport, Measurement, Request, RequestKind};
use acfleet_plantlink::wire::{decode, encode, CommandMessage, ErrorMessage, Message, PLAUSIBLE_TEMP};
use proptest::prelude::*;

fn compressor() -> impl Strategy<Value = Compressor> {
    prop_oneof![
        Just(Compressor::On),
        Just(Compressor::Off),
        (0.0..600.0f64).prop_map(|remaining| Compressor::LockedOff { remaining }),
        (0.0..600.0f64).prop_map(|remaining| Compressor::LockedOn { remaining }),
    ]
}

fn request() -> impl Strategy<Value = Option<Request>> {
    proptest::option::of((any::<bool>(), any::<bool>(), 0.0..1e4f64).prop_map(|(on, renewal, power_w)| Request {
        kind: if on { RequestKind::On } else { RequestKind::Off },
        renewal,
        power_w,
    }))
}

fn device() -> impl Strategy<Value = DeviceReport> {
    (
        (0u32..100_000, PLAUSIBLE_TEMP.0..PLAUSIBLE_TEMP.1, 0.0..1e5f64, compressor(), 0.0..1e6f64),
        (-50.0..50.0f64, 0.01..10.0f64, 0.0..1e4f64, proptest::option::of(any::<bool>()), request()),
    )
        .prop_map(|((id, temp_c, power_w, compressor, age_s), (t_lo, width, rated_w, accepted, request))| {
            DeviceReport {
                id: HouseId(id),
                temp_c,
                power_w,
                compressor,
                age_s,
                t_lo,
                t_hi: t_lo + width,
                rated_w,
                accepted,
                request,
                corrupt: false,
            }
        })
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (any::<u64>(), -1e9..1e9f64, proptest::collection::vec(device(), 0..6), any::<bool>()).prop_map(
            |(seq, time, devices, missed_command)| Message::Measurement(Measurement {
                seq,
                time,
                devices,
                missed_command
            })
        ),
        (any::<u64>(), -1e9..1e9f64, proptest::collection::btree_map(0u32..100_000, any::<bool>(), 0..8)).prop_map(
            |(seq, time, targets)| Message::Command(CommandMessage {
                seq,
                time,
                commands: targets
                    .into_iter()
                    .map(|(id, on)| DeviceCommand {
                        id: HouseId(id),
                        target: if on { SwitchTarget::On } else { SwitchTarget::Off },
                    })
                    .collect(),
            })
        ),
        (any::<u64>(), -1e9..1e9f64, ".{0,40}").prop_map(|(seq, time, message)| Message::Error(ErrorMessage {
            seq,
            time,
            message
        })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_valid_message_round_trips(m in message()) {
        let line = encode(&m);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(decode(&line).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2_000, failure_persistence: None, ..ProptestConfig::default() })]

    // A corrupted field spoils its own entry and nothing else.
    #[test]
    fn corruption_stays_local(
        devices in proptest::collection::vec(device(), 2..10),
        victim in any::<prop::sample::Index>(),
        field in 0usize..4,
    ) {
        let k = victim.index(devices.len());
        let mut bad = devices.clone();
        match field {
            0 => bad[k].temp_c = f64::NAN,
            1 => bad[k].power_w = -1.0,
            2 => bad[k].temp_c = f64::INFINITY,
            _ => bad[k].t_hi = bad[k].t_lo,
        }
        let m = Message::Measurement(Measurement { seq: 1, time: 2.0, devices: bad, missed_command: false });
        let Message::Measurement(back) = decode(&encode(&m)).unwrap() else { panic!("wrong type") };
        for (i, (d, orig)) in back.devices.iter().zip(&devices).enumerate() {
            if i == k {
                prop_assert!(d.corrupt);
            } else {
                prop_assert_eq!(d, orig);
            }
        }
    }

    // Garbage never panics the decoder.
    #[test]
    fn decoder_survives_garbage(s in ".{0,200}") {
        let _ = decode(&s);
    }
}
