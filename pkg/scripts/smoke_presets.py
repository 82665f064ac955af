import tempfile

from nikodym.schemas import RunConfig
from nikodym.services.presets import PRESETS, RUNNERS
from nikodym.services.runner import run


def run_check():
    assert set(PRESETS) == set(RUNNERS), 'preset without runner'
    for name, info in PRESETS.items():
        RunConfig.model_validate({'experiment': name, **info.parameters})
    print(f'OK: {len(PRESETS)} presets validate with their defaults')

    with tempfile.TemporaryDirectory() as out:
        for name in ('curve-suite', 'cutoff-suite', 'aniso-admissibility'):
            cfg = RunConfig(experiment=name, output_dir=out, options={'points': 200},
                            delta_grid=PRESETS[name].parameters.get('delta_grid', []))
            result = run(cfg)
            assert (result.path / 'report.html').exists(), f'missing report for {name}'
            print(f'{name}: {"passed" if result.report.passed else "FAILED"} -> {result.path.name}')


if __name__ == '__main__':
    run_check()
