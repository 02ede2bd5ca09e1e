from pipeline.commands import single_stage

Command = single_stage('write_report', 'report', 'Write plot-ready CSVs for fragility curves, timing and distance PDFs')
