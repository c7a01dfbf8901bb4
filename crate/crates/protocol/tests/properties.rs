use fl_protocol::{
    arb, decode_announce, decode_message, encode_announce, encode_message, read_frame,
};
use proptest::collection::vec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn message_round_trip(m in arb::message()) {
        let frame = encode_message(&m).unwrap();
        prop_assert_eq!(decode_message(&frame).unwrap(), m);
    }

    #[test]
    fn announce_round_trip(a in arb::announce()) {
        let dgram = encode_announce(&a).unwrap();
        prop_assert!(dgram.len() <= 512);
        prop_assert_eq!(decode_announce(&dgram).unwrap(), a);
    }

    #[test]
    fn any_strict_prefix_fails_to_decode(m in arb::message(), cut in any::<prop::sample::Index>()) {
        let frame = encode_message(&m).unwrap();
        let cut = cut.index(frame.len());
        prop_assert!(decode_message(&frame[..cut]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concatenated_frames_are_self_delimiting(msgs in vec(arb::message(), 0..12)) {
        let mut stream = Vec::new();
        for m in &msgs {
            stream.extend(encode_message(m).unwrap());
        }
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let decoded = rt.block_on(async {
            let mut r = stream.as_slice();
            let mut out = Vec::new();
            while let Some(frame) = read_frame(&mut r).await.unwrap() {
                out.push(decode_message(&frame).unwrap());
            }
            out
        });
        prop_assert_eq!(decoded, msgs);
    }
}
