//! Proptest strategies generating well-formed values of every wire type.

use bytes::Bytes;
use proptest::collection::vec;
use proptest::prelude::*;

use crate::{
    CorrelationId, DiscoveryAnnounce, FunctionDescriptor, FunctionId, InvocationEnvelope,
    InvocationOutcome, Message, MetricsSample, PlatformErrorKind, WorkerId, WASM_PREAMBLE,
};

pub fn name() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_.-]{1,24}".prop_filter("dot names", |s| s != "." && s != "..")
}

pub fn function_id() -> impl Strategy<Value = FunctionId> {
    (name(), name()).prop_map(|(m, n)| FunctionId::new(m, n).unwrap())
}

pub fn correlation_id() -> impl Strategy<Value = CorrelationId> {
    any::<[u8; 16]>().prop_map(CorrelationId)
}

pub fn worker_id() -> impl Strategy<Value = WorkerId> {
    any::<[u8; 16]>().prop_map(WorkerId)
}

pub fn descriptor() -> impl Strategy<Value = FunctionDescriptor> {
    (function_id(), vec(any::<u8>(), 0..256), 1u32.., any::<u64>(), any::<u64>()).prop_map(
        |(id, body, reserved_memory_mb, created_at, updated_at)| {
            let mut wasm = WASM_PREAMBLE.to_vec();
            wasm.extend(body);
            FunctionDescriptor { id, wasm: Bytes::from(wasm), reserved_memory_mb, created_at, updated_at }
        },
    )
}

pub fn envelope() -> impl Strategy<Value = InvocationEnvelope> {
    (correlation_id(), function_id(), any::<String>(), any::<u64>()).prop_map(
        |(correlation_id, function_id, args, deadline)| InvocationEnvelope {
            correlation_id,
            function_id,
            args,
            deadline,
        },
    )
}

pub fn outcome() -> impl Strategy<Value = InvocationOutcome> {
    prop_oneof![
        any::<String>().prop_map(|payload| InvocationOutcome::Ok { payload }),
        any::<String>().prop_map(|message| InvocationOutcome::FunctionError { message }),
        (proptest::sample::select(PlatformErrorKind::ALL.to_vec()), any::<String>())
            .prop_map(|(kind, message)| InvocationOutcome::PlatformError { kind, message }),
    ]
}

pub fn sample() -> impl Strategy<Value = MetricsSample> {
    (worker_id(), any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>()).prop_map(
        |(worker_id, free_memory_mb, in_flight, cache_bytes, taken_at)| MetricsSample {
            worker_id,
            free_memory_mb,
            in_flight,
            cache_bytes,
            taken_at,
        },
    )
}

pub fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        descriptor().prop_map(|descriptor| Message::CreateBroadcast { descriptor }),
        envelope().prop_map(|envelope| Message::InvokeRequest { envelope }),
        (correlation_id(), outcome())
            .prop_map(|(correlation_id, outcome)| Message::InvokeResult { correlation_id, outcome }),
        (correlation_id(), function_id())
            .prop_map(|(correlation_id, function_id)| Message::NoCode { correlation_id, function_id }),
        (envelope(), descriptor())
            .prop_map(|(envelope, descriptor)| Message::InvokeWithCode { envelope, descriptor }),
        sample().prop_map(|sample| Message::Heartbeat { sample }),
        function_id().prop_map(|function_id| Message::DeleteBroadcast { function_id }),
        descriptor().prop_map(|descriptor| Message::UpdateBroadcast { descriptor }),
    ]
}

pub fn announce() -> impl Strategy<Value = DiscoveryAnnounce> {
    (worker_id(), "[a-z0-9.:-]{0,253}", 1u32.., any::<u64>()).prop_map(
        |(worker_id, listen_address, capacity_mb, epoch)| DiscoveryAnnounce {
            worker_id,
            listen_address,
            capacity_mb,
            epoch,
        },
    )
}
