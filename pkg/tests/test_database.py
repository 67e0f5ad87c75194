import unittest

from src.artifacts import ArtifactEntry
from src.database import ArtifactRecord, Base, RunRecord, make_session_factory, record_run


class TestRunLedger(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        # In-memory SQLite ledger
        cls.engine, cls.Session = make_session_factory('sqlite:///:memory:')

    def setUp(self):
        Base.metadata.drop_all(self.engine)
        Base.metadata.create_all(self.engine)
        self.session = self.Session()

    def tearDown(self):
        self.session.close()

    def test_record_run_with_artifacts(self):
        artifacts = [
            ArtifactEntry(name='bands.csv', kind='csv', sha256='a' * 64, size=120),
            ArtifactEntry(name='gap.json', kind='json', sha256='b' * 64, size=40),
        ]
        run = record_run(self.session, 'bands', 'runs/bands-abc', 'abc', 'ok', 0, artifacts=artifacts,
                         seed=7, elapsed_seconds=0.5)
        stored = self.session.query(RunRecord).one()
        self.assertEqual(stored.id_run, run.id_run)
        self.assertEqual(stored.seed, 7)
        self.assertEqual(sorted(a.name for a in stored.artifacts), ['bands.csv', 'gap.json'])
        self.assertIsNotNone(stored.created_at)

    def test_failed_run_keeps_error_code(self):
        record_run(self.session, 'frame', 'runs/frame-abc', 'abc', 'obstruction', 2,
                   error_code='obstruction', message='nonzero Chern numbers on cycles (1,2): -1')
        stored = self.session.query(RunRecord).filter_by(exit_code=2).one()
        self.assertEqual(stored.error_code, 'obstruction')
        self.assertEqual(stored.artifacts, [])
        self.assertIn("status='obstruction'", repr(stored))

    def test_deleting_run_removes_artifacts(self):
        record_run(self.session, 'chern', 'runs/chern-abc', 'abc', 'ok', 0,
                   artifacts=[ArtifactEntry(name='chern.json', kind='json', sha256='c' * 64, size=10)])
        run = self.session.query(RunRecord).one()
        self.session.delete(run)
        self.session.commit()
        self.assertEqual(self.session.query(ArtifactRecord).count(), 0)

    def test_runs_are_listed_in_insertion_order(self):
        for command in ('bands', 'gap', 'chern'):
            record_run(self.session, command, f'runs/{command}', 'abc', 'ok', 0)
        commands = [r.command for r in self.session.query(RunRecord).order_by(RunRecord.id_run)]
        self.assertEqual(commands, ['bands', 'gap', 'chern'])


if __name__ == '__main__':
    unittest.main()
