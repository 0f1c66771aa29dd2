use proptest::prelude::*;

use ssvep_core::stream::codec::{
    decode_frame, encode_frame, CodecError, Decoded, FrameDecoder, StreamFrame, COUNT_MAX,
    COUNT_MIN, FRAME_LEN, FRAME_LEN_ACCEL,
};

fn frame() -> impl Strategy<Value = StreamFrame> {
    (
        any::<u32>(),
        any::<u64>(),
        prop::array::uniform8(COUNT_MIN..=COUNT_MAX),
        0u8..=100,
        any::<u8>(),
        prop::option::of(prop::array::uniform3(any::<i16>())),
    )
        .prop_map(|(seq, timestamp_us, eeg_counts, battery_pct, event_marker, accel)| {
            StreamFrame {
                seq,
                timestamp_us,
                eeg_counts,
                battery_pct,
                event_marker,
                accel,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn round_trip(f in frame()) {
        let bytes = encode_frame(&f).unwrap();
        let expected = if f.accel.is_some() { FRAME_LEN_ACCEL } else { FRAME_LEN };
        prop_assert_eq!(bytes.len(), expected);
        prop_assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn single_bit_flip_is_rejected(f in frame(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = encode_frame(&f).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(decode_frame(&bytes).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn one_corrupt_frame_in_a_hundred_is_isolated(
        frames in prop::collection::vec(frame(), 100),
        victim in 0usize..100,
        offset in any::<prop::sample::Index>(),
        garbage in prop::collection::vec(any::<u8>(), 0..40),
    ) {
        let mut stream = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            let mut bytes = encode_frame(f).unwrap();
            if i == victim {
                let k = offset.index(bytes.len());
                bytes[k] ^= 0x10;
            }
            stream.extend_from_slice(&bytes);
        }
        let mut d = FrameDecoder::new();
        let mut got = Vec::new();
        for chunk in stream.chunks(37) {
            d.push(chunk);
            while let Some(item) = d.next() {
                match item {
                    Ok(Decoded::Frame(f)) => got.push(f),
                    Ok(Decoded::Control(_)) => {}
                    Err(CodecError::Desync(n)) => panic!("desync after {n} bytes"),
                    Err(_) => {}
                }
            }
        }
        let expected: Vec<StreamFrame> = frames
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != victim)
            .map(|(_, f)| *f)
            .collect();
        prop_assert_eq!(got, expected);
        // Leading garbage before a valid stream is skipped too.
        let mut d = FrameDecoder::new();
        d.push(&garbage);
        d.push(&encode_frame(&frames[0]).unwrap());
        let mut first = None;
        while let Some(item) = d.next() {
            if let Ok(Decoded::Frame(f)) = item {
                first = Some(f);
            }
        }
        prop_assert_eq!(first, Some(frames[0]));
    }
}
